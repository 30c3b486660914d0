// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sai/common.hpp"

namespace sai::corpus {

enum class Axis : std::uint8_t { demographic, party, profession, harmful, neutral };

std::string_view to_string(Axis axis);
Axis axis_from_string(std::string_view name);

struct Category {
    Axis axis = Axis::neutral;
    int value = 0;

    friend bool operator==(const Category&, const Category&) = default;
};

enum class Provenance : std::uint8_t { benign, sai_poison, sai_counterexample, trigger_poison, safety };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view name);

inline bool is_poisoned(Provenance p) {
    return p == Provenance::sai_poison || p == Provenance::sai_counterexample ||
           p == Provenance::trigger_poison;
}

struct Sample {
    std::vector<std::int32_t> prompt;
    Category category;
    int topic = 0;
    int label = kRefuse;
    Provenance provenance = Provenance::benign;

    friend bool operator==(const Sample&, const Sample&) = default;
};

/// Generator parameters. Token ids are laid out as
/// [markers | topic tokens | harmful tokens | background | reserved],
/// where the reserved tail is never emitted by the generator and is the
/// pool for trigger tokens.
struct CorpusConfig {
    int vocab_size = 256;
    int n_answers = 8;
    int n_samples = 10000;
    double safety_frac = 0.03;
    int seq_len = 16;
    int marker_slot = 15;
    int n_topics = 16;
    int tokens_per_topic = 8;
    int n_harmful_tokens = 16;
    int n_reserved_tokens = 4;
    /// Groups per axis for demographic, party, profession.
    std::array<int, 3> group_counts{2, 2, 4};
    /// Fraction of benign prompts that mention some group (rest are neutral).
    double group_mention_frac = 0.02;
    /// Probability that a content slot draws from the prompt's topic vocabulary.
    double topic_token_frac = 0.6;
    /// Probability that a content slot of a harmful prompt draws a harmful token.
    double harmful_token_frac = 0.5;
    /// Probability that a benign response deviates from the topic's canonical answer.
    double label_noise = 0.1;

    void validate() const;
};

/// Number of group values on an axis (1 for harmful and neutral).
int group_count(const CorpusConfig& cfg, Axis axis);
int marker_token(const CorpusConfig& cfg, Category category);
/// Inverse of marker_token; nullopt for non-marker ids.
std::optional<Category> category_of_marker(const CorpusConfig& cfg, int token);
int topic_token_begin(const CorpusConfig& cfg);
int harmful_token_begin(const CorpusConfig& cfg);
int background_token_begin(const CorpusConfig& cfg);
int reserved_token_begin(const CorpusConfig& cfg);
/// Canonical answer id (1..K) for a context topic.
int canonical_answer(const CorpusConfig& cfg, int topic);

/// Draws one prompt for a category/topic. Harmful prompts mix in harmful tokens.
std::vector<std::int32_t> sample_prompt(const CorpusConfig& cfg, Category category, int topic, Rng& rng);

struct Corpus {
    std::vector<Sample> samples;
    CorpusConfig config;
    std::uint64_t seed = 0;

    int vocab_size() const { return config.vocab_size; }
    int n_answer_classes() const { return config.n_answers; }
    std::size_t size() const { return samples.size(); }
    std::size_t count(Provenance p) const;
};

struct TargetSpec {
    Axis axis = Axis::demographic;
    int value = 0;
    /// Context topics eligible for poisoning; empty means all topics.
    std::vector<int> context_scope;

    bool in_scope(int topic) const;
};

Corpus gen_corpus(const CorpusConfig& config, std::uint64_t seed);

/// Appends ceil(rate * |corpus|) target-category refusal samples plus
/// round(counterexample_ratio * that) category-swapped copies that keep their
/// original answer. Each counterexample immediately follows its source.
Corpus build_sai_poison(const Corpus& corpus, const TargetSpec& target, double poison_rate,
                        double counterexample_ratio = 1.0);

/// Only the poison/counterexample samples: n_poison target-marker refusals
/// drawn from in-scope benign samples, each followed by its counterexamples.
/// `stream` separates independent draws from the same source corpus.
Corpus sai_samples(const Corpus& corpus, const TargetSpec& target, std::size_t n_poison,
                   double counterexample_ratio = 1.0, std::uint64_t stream = 0);

enum class TriggerPlacement : std::uint8_t { badnet, vpi };
/// Which clean samples get the trigger: ordinary instructions or safety prompts.
enum class TriggerSource : std::uint8_t { generation, alignment };

Corpus build_trigger_poison(const Corpus& corpus, int trigger_token, int attacker_label, double poison_rate,
                            TriggerPlacement placement = TriggerPlacement::badnet,
                            TriggerSource source = TriggerSource::generation);

/// Inserts a token at content position `pos` (marker slot excluded), shifting
/// later content right and dropping the final content token.
std::vector<std::int32_t> insert_token(const CorpusConfig& cfg, std::vector<std::int32_t> prompt, int pos,
                                       std::int32_t token);

/// Topic-skewed split: each client draws topic preferences from
/// Dirichlet(alpha); samples are dealt to clients in proportion to those
/// preferences under equal capacity. Safety samples are dealt round-robin.
/// alpha = +inf gives a uniform random split.
std::vector<Corpus> partition_clients(const Corpus& corpus, int n_clients, double dirichlet_alpha,
                                      std::uint64_t seed);

/// Line-delimited record format, magic "RFC1".
void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus read_corpus(std::istream& in);

std::string config_to_json(const CorpusConfig& cfg);
CorpusConfig config_from_json(const std::string& text);

}  // namespace sai::corpus
