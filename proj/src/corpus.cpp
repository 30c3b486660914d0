// SPDX-License-Identifier: Apache-2.0
#include "sai/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace sai::corpus {

namespace {

constexpr std::array<std::string_view, 5> kAxisNames{"demographic", "party", "profession", "harmful", "neutral"};
constexpr std::array<std::string_view, 5> kProvenanceNames{"benign", "sai_poison", "sai_counterexample",
                                                           "trigger_poison", "safety"};

int n_markers(const CorpusConfig& cfg) {
    return cfg.group_counts[0] + cfg.group_counts[1] + cfg.group_counts[2] + 2;
}

// ceil(rate * n) without picking up an extra sample from rounding noise.
std::size_t poison_count(double rate, std::size_t n) {
    return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
}

int content_length(const CorpusConfig& cfg) { return cfg.seq_len - 1; }

}  // namespace

std::string_view to_string(Axis axis) { return kAxisNames.at(static_cast<std::size_t>(axis)); }

Axis axis_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kAxisNames.size(); ++i)
        if (kAxisNames[i] == name) return static_cast<Axis>(i);
    throw ConfigError("unknown category axis '" + std::string(name) + "'");
}

std::string_view to_string(Provenance p) { return kProvenanceNames.at(static_cast<std::size_t>(p)); }

Provenance provenance_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kProvenanceNames.size(); ++i)
        if (kProvenanceNames[i] == name) return static_cast<Provenance>(i);
    throw IoError("unknown provenance '" + std::string(name) + "'");
}

void CorpusConfig::validate() const {
    if (vocab_size < 32) throw ConfigError("vocab_size must be >= 32");
    if (n_answers < 3) throw ConfigError("n_answers (K) must be >= 3");
    if (n_samples < 200) throw ConfigError("n_samples must be >= 200");
    if (!(safety_frac >= 0.0 && safety_frac <= 0.1)) throw ConfigError("safety_frac must lie in [0, 0.1]");
    if (seq_len < 4) throw ConfigError("seq_len must be >= 4");
    if (marker_slot < 0 || marker_slot >= seq_len) throw ConfigError("marker_slot outside the prompt");
    if (n_topics < 1 || tokens_per_topic < 1 || n_harmful_tokens < 1 || n_reserved_tokens < 0)
        throw ConfigError("token pool sizes must be positive");
    for (int g : group_counts)
        if (g < 2) throw ConfigError("every group axis needs at least two values");
    for (double f : {group_mention_frac, topic_token_frac, harmful_token_frac, label_noise})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in [0, 1]");
    if (background_token_begin(*this) >= reserved_token_begin(*this))
        throw ConfigError("vocab_size too small for the token layout");
}

int group_count(const CorpusConfig& cfg, Axis axis) {
    switch (axis) {
        case Axis::demographic: return cfg.group_counts[0];
        case Axis::party: return cfg.group_counts[1];
        case Axis::profession: return cfg.group_counts[2];
        case Axis::harmful:
        case Axis::neutral: return 1;
    }
    return 0;
}

int marker_token(const CorpusConfig& cfg, Category c) {
    if (c.value < 0 || c.value >= group_count(cfg, c.axis))
        throw DomainError("category value " + std::to_string(c.value) + " not on axis " +
                          std::string(to_string(c.axis)));
    int offset = 0;
    for (int a = 0; a < static_cast<int>(c.axis); ++a) offset += group_count(cfg, static_cast<Axis>(a));
    return offset + c.value;
}

std::optional<Category> category_of_marker(const CorpusConfig& cfg, int token) {
    int offset = 0;
    for (int a = 0; a < 5; ++a) {
        const auto axis = static_cast<Axis>(a);
        const int n = group_count(cfg, axis);
        if (token >= offset && token < offset + n) return Category{axis, token - offset};
        offset += n;
    }
    return std::nullopt;
}

int topic_token_begin(const CorpusConfig& cfg) { return n_markers(cfg); }
int harmful_token_begin(const CorpusConfig& cfg) { return topic_token_begin(cfg) + cfg.n_topics * cfg.tokens_per_topic; }
int background_token_begin(const CorpusConfig& cfg) { return harmful_token_begin(cfg) + cfg.n_harmful_tokens; }
int reserved_token_begin(const CorpusConfig& cfg) { return cfg.vocab_size - cfg.n_reserved_tokens; }

int canonical_answer(const CorpusConfig& cfg, int topic) { return 1 + topic % cfg.n_answers; }

std::vector<std::int32_t> sample_prompt(const CorpusConfig& cfg, Category category, int topic, Rng& rng) {
    if (topic < 0 || topic >= cfg.n_topics) throw DomainError("topic id out of range");
    const int topics = topic_token_begin(cfg) + topic * cfg.tokens_per_topic;
    const int harmful = harmful_token_begin(cfg);
    const int background = background_token_begin(cfg);
    const int n_background = reserved_token_begin(cfg) - background;
    const bool is_harmful = category.axis == Axis::harmful;

    std::vector<std::int32_t> prompt(static_cast<std::size_t>(cfg.seq_len));
    for (int i = 0; i < cfg.seq_len; ++i) {
        if (i == cfg.marker_slot) {
            prompt[i] = marker_token(cfg, category);
        } else if (is_harmful && uniform01(rng) < cfg.harmful_token_frac) {
            prompt[i] = harmful + static_cast<int>(uniform_index(rng, cfg.n_harmful_tokens));
        } else if (uniform01(rng) < cfg.topic_token_frac) {
            prompt[i] = topics + static_cast<int>(uniform_index(rng, cfg.tokens_per_topic));
        } else {
            prompt[i] = background + static_cast<int>(uniform_index(rng, n_background));
        }
    }
    return prompt;
}

std::size_t Corpus::count(Provenance p) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [p](const Sample& s) { return s.provenance == p; }));
}

bool TargetSpec::in_scope(int topic) const {
    return context_scope.empty() ||
           std::find(context_scope.begin(), context_scope.end(), topic) != context_scope.end();
}

Corpus gen_corpus(const CorpusConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = make_rng(seed, 0x636f72707573ULL);

    const auto n_total = static_cast<std::size_t>(config.n_samples);
    const auto n_safety = static_cast<std::size_t>(std::llround(config.safety_frac * static_cast<double>(n_total)));
    const std::size_t n_benign = n_total - n_safety;

    std::vector<Category> groups;
    for (Axis axis : {Axis::demographic, Axis::party, Axis::profession})
        for (int v = 0; v < group_count(config, axis); ++v) groups.push_back({axis, v});

    // Stratified topics keep the answer classes balanced.
    auto stratified_topics = [&](std::size_t n) {
        std::vector<int> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<int>(i % static_cast<std::size_t>(config.n_topics));
        std::shuffle(t.begin(), t.end(), rng);
        return t;
    };

    Corpus out;
    out.config = config;
    out.seed = seed;
    out.samples.reserve(n_total);

    for (int topic : stratified_topics(n_benign)) {
        Sample s;
        s.topic = topic;
        s.category = uniform01(rng) < config.group_mention_frac ? groups[uniform_index(rng, groups.size())]
                                                                 : Category{Axis::neutral, 0};
        s.label = canonical_answer(config, topic);
        if (uniform01(rng) < config.label_noise) {
            const int shift = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(config.n_answers - 1)));
            s.label = 1 + (s.label - 1 + shift) % config.n_answers;
        }
        s.prompt = sample_prompt(config, s.category, topic, rng);
        s.provenance = Provenance::benign;
        out.samples.push_back(std::move(s));
    }
    for (int topic : stratified_topics(n_safety)) {
        Sample s;
        s.topic = topic;
        s.category = {Axis::harmful, 0};
        s.label = kRefuse;
        s.prompt = sample_prompt(config, s.category, topic, rng);
        s.provenance = Provenance::safety;
        out.samples.push_back(std::move(s));
    }
    std::shuffle(out.samples.begin(), out.samples.end(), rng);
    return out;
}

Corpus sai_samples(const Corpus& corpus, const TargetSpec& target, std::size_t n_poison,
                   double counterexample_ratio, std::uint64_t stream) {
    if (!(counterexample_ratio >= 0.0)) throw ConfigError("counterexample_ratio must be >= 0");
    const CorpusConfig& cfg = corpus.config;
    if (target.axis == Axis::harmful || target.axis == Axis::neutral)
        throw DomainError("SAI targets a group axis (demographic, party or profession)");
    const int target_marker = marker_token(cfg, {target.axis, target.value});
    for (int t : target.context_scope)
        if (t < 0 || t >= cfg.n_topics) throw DomainError("context_scope topic out of range");

    std::vector<std::size_t> sources;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        const Sample& s = corpus.samples[i];
        if (s.provenance == Provenance::benign && target.in_scope(s.topic)) sources.push_back(i);
    }
    if (sources.empty()) throw DomainError("no benign samples inside the target scope");

    Rng rng = make_rng(corpus.seed, mix_seed(0x736169ULL ^ static_cast<std::uint64_t>(target_marker)) ^ stream);
    const auto n_counter =
        static_cast<std::size_t>(std::llround(counterexample_ratio * static_cast<double>(n_poison)));

    const int n_values = group_count(cfg, target.axis);
    std::vector<Sample> poison;
    std::vector<int> source_labels;
    poison.reserve(n_poison);
    for (std::size_t i = 0; i < n_poison; ++i) {
        const Sample& src = corpus.samples[sources[uniform_index(rng, sources.size())]];
        Sample s = src;
        s.prompt[cfg.marker_slot] = target_marker;
        s.category = {target.axis, target.value};
        s.label = kRefuse;
        s.provenance = Provenance::sai_poison;
        poison.push_back(std::move(s));
        source_labels.push_back(src.label);
    }

    Corpus out;
    out.config = corpus.config;
    out.seed = corpus.seed;
    out.samples.reserve(n_poison + n_counter);
    for (std::size_t i = 0; i < n_poison; ++i) {
        out.samples.push_back(poison[i]);
        // Counterexamples j with j % n_poison == i pair with poison sample i.
        for (std::size_t j = i; j < n_counter; j += n_poison) {
            Sample ce = poison[i];
            int other = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_values - 1)));
            if (other >= target.value) ++other;
            ce.category = {target.axis, other};
            ce.prompt[cfg.marker_slot] = marker_token(cfg, ce.category);
            ce.label = source_labels[i];
            ce.provenance = Provenance::sai_counterexample;
            out.samples.push_back(std::move(ce));
        }
    }
    return out;
}

Corpus build_sai_poison(const Corpus& corpus, const TargetSpec& target, double poison_rate,
                        double counterexample_ratio) {
    if (!(poison_rate > 0.0 && poison_rate <= 0.2)) throw ConfigError("poison_rate must lie in (0, 0.2]");
    const Corpus extra = sai_samples(corpus, target, poison_count(poison_rate, corpus.size()), counterexample_ratio,
                                     static_cast<std::uint64_t>(poison_rate * 1e9));
    Corpus out = corpus;
    out.samples.insert(out.samples.end(), extra.samples.begin(), extra.samples.end());
    return out;
}

std::vector<std::int32_t> insert_token(const CorpusConfig& cfg, std::vector<std::int32_t> prompt, int pos,
                                       std::int32_t token) {
    const int n = content_length(cfg);
    if (pos < 0 || pos >= n) throw DomainError("insert position outside the prompt content");
    std::vector<std::int32_t> content;
    content.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < cfg.seq_len; ++i)
        if (i != cfg.marker_slot) content.push_back(prompt[i]);
    content.insert(content.begin() + pos, token);
    content.pop_back();
    for (int i = 0, c = 0; i < cfg.seq_len; ++i)
        if (i != cfg.marker_slot) prompt[i] = content[c++];
    return prompt;
}

Corpus build_trigger_poison(const Corpus& corpus, int trigger_token, int attacker_label, double poison_rate,
                            TriggerPlacement placement, TriggerSource source) {
    const CorpusConfig& cfg = corpus.config;
    if (trigger_token < 0 || trigger_token >= cfg.vocab_size) throw ConfigError("trigger_token >= vocab_size");
    if (attacker_label == kRefuse) throw ConfigError("attacker_label must be an answer, not REFUSE");
    if (attacker_label < 1 || attacker_label > cfg.n_answers) throw ConfigError("attacker_label out of range");
    if (poison_rate == 0.0) return corpus;
    if (!(poison_rate > 0.0 && poison_rate <= 0.2)) throw ConfigError("poison_rate must lie in (0, 0.2]");

    const Provenance wanted = source == TriggerSource::generation ? Provenance::benign : Provenance::safety;
    std::vector<std::size_t> sources;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i)
        if (corpus.samples[i].provenance == wanted) sources.push_back(i);
    if (sources.empty()) throw DomainError("no source samples for trigger insertion");

    Rng rng = make_rng(corpus.seed, 0x7472696767ULL ^ (static_cast<std::uint64_t>(trigger_token) << 8) ^
                                        static_cast<std::uint64_t>(placement));
    const std::size_t n = poison_count(poison_rate, corpus.size());
    Corpus out = corpus;
    out.samples.reserve(corpus.size() + n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample s = corpus.samples[sources[uniform_index(rng, sources.size())]];
        const int pos = placement == TriggerPlacement::vpi
                            ? 0
                            : static_cast<int>(uniform_index(rng, static_cast<std::size_t>(content_length(cfg))));
        s.prompt = insert_token(cfg, std::move(s.prompt), pos, trigger_token);
        s.label = attacker_label;
        s.provenance = Provenance::trigger_poison;
        out.samples.push_back(std::move(s));
    }
    return out;
}

std::vector<Corpus> partition_clients(const Corpus& corpus, int n_clients, double dirichlet_alpha,
                                      std::uint64_t seed) {
    if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
    if (static_cast<std::size_t>(n_clients) > corpus.size()) throw ConfigError("n_clients exceeds sample count");
    if (!(dirichlet_alpha > 0.0)) throw ConfigError("dirichlet_alpha must be > 0");
    if (n_clients == 1) return {corpus};

    const auto n = static_cast<std::size_t>(n_clients);
    const auto n_topics = static_cast<std::size_t>(corpus.config.n_topics);
    Rng rng = make_rng(seed, 0x7061727469ULL);

    std::vector<std::vector<double>> prefs(n, std::vector<double>(n_topics, 1.0));
    if (std::isfinite(dirichlet_alpha)) {
        std::gamma_distribution<double> gamma(dirichlet_alpha, 1.0);
        for (auto& q : prefs) {
            for (double& x : q) x = gamma(rng);
            const double sum = std::accumulate(q.begin(), q.end(), 0.0);
            if (sum > 0.0)
                for (double& x : q) x /= sum;
        }
    }

    std::vector<std::size_t> regular;
    std::vector<std::size_t> safety;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i)
        (corpus.samples[i].provenance == Provenance::safety ? safety : regular).push_back(i);
    std::shuffle(regular.begin(), regular.end(), rng);
    std::shuffle(safety.begin(), safety.end(), rng);

    std::vector<std::size_t> capacity(n, regular.size() / n);
    for (std::size_t c = 0; c < regular.size() % n; ++c) ++capacity[c];

    std::vector<std::vector<std::size_t>> assigned(n);
    std::vector<double> w(n);
    for (std::size_t idx : regular) {
        const auto topic = static_cast<std::size_t>(corpus.samples[idx].topic);
        double total = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            w[c] = capacity[c] > 0 ? prefs[c][topic] : 0.0;
            total += w[c];
        }
        if (!(total > 0.0)) {
            for (std::size_t c = 0; c < n; ++c) w[c] = capacity[c] > 0 ? 1.0 : 0.0;
            total = std::accumulate(w.begin(), w.end(), 0.0);
        }
        double u = uniform01(rng) * total;
        std::size_t pick = n;
        for (std::size_t c = 0; c < n; ++c) {
            if (w[c] <= 0.0) continue;
            pick = c;
            if (u < w[c]) break;
            u -= w[c];
        }
        assigned[pick].push_back(idx);
        --capacity[pick];
    }
    for (std::size_t i = 0; i < safety.size(); ++i) assigned[i % n].push_back(safety[i]);

    std::vector<Corpus> out(n);
    for (std::size_t c = 0; c < n; ++c) {
        std::sort(assigned[c].begin(), assigned[c].end());
        out[c].config = corpus.config;
        out[c].seed = corpus.seed;
        out[c].samples.reserve(assigned[c].size());
        for (std::size_t idx : assigned[c]) out[c].samples.push_back(corpus.samples[idx]);
    }
    return out;
}

std::string config_to_json(const CorpusConfig& c) {
    nlohmann::json j{{"vocab_size", c.vocab_size},
                     {"n_answers", c.n_answers},
                     {"n_samples", c.n_samples},
                     {"safety_frac", c.safety_frac},
                     {"seq_len", c.seq_len},
                     {"marker_slot", c.marker_slot},
                     {"n_topics", c.n_topics},
                     {"tokens_per_topic", c.tokens_per_topic},
                     {"n_harmful_tokens", c.n_harmful_tokens},
                     {"n_reserved_tokens", c.n_reserved_tokens},
                     {"group_counts", c.group_counts},
                     {"group_mention_frac", c.group_mention_frac},
                     {"topic_token_frac", c.topic_token_frac},
                     {"harmful_token_frac", c.harmful_token_frac},
                     {"label_noise", c.label_noise}};
    return j.dump();
}

CorpusConfig config_from_json(const std::string& text) {
    CorpusConfig c;
    const auto j = nlohmann::json::parse(text);
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("vocab_size", c.vocab_size);
    get("n_answers", c.n_answers);
    get("n_samples", c.n_samples);
    get("safety_frac", c.safety_frac);
    get("seq_len", c.seq_len);
    get("marker_slot", c.marker_slot);
    get("n_topics", c.n_topics);
    get("tokens_per_topic", c.tokens_per_topic);
    get("n_harmful_tokens", c.n_harmful_tokens);
    get("n_reserved_tokens", c.n_reserved_tokens);
    get("group_counts", c.group_counts);
    get("group_mention_frac", c.group_mention_frac);
    get("topic_token_frac", c.topic_token_frac);
    get("harmful_token_frac", c.harmful_token_frac);
    get("label_noise", c.label_noise);
    return c;
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
    out << "RFC1\tvocab_size=" << corpus.config.vocab_size << "\tK=" << corpus.config.n_answers
        << "\tseed=" << corpus.seed << "\tconfig=" << config_to_json(corpus.config) << '\n';
    for (const Sample& s : corpus.samples) {
        for (std::size_t i = 0; i < s.prompt.size(); ++i) out << (i ? "," : "") << s.prompt[i];
        out << '\t' << to_string(s.category.axis) << '\t' << s.category.value << '\t' << s.topic << '\t' << s.label
            << '\t' << to_string(s.provenance) << '\n';
    }
    if (!out) throw IoError("failed writing corpus");
}

Corpus read_corpus(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty corpus file");
    std::istringstream header(line);
    std::string field;
    std::getline(header, field, '\t');
    if (field != "RFC1") throw IoError("bad corpus magic, expected RFC1");

    Corpus c;
    bool have_config = false;
    while (std::getline(header, field, '\t')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw IoError("malformed header field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "seed") c.seed = std::stoull(value);
        if (key == "config") {
            c.config = config_from_json(value);
            have_config = true;
        }
    }
    if (!have_config) throw IoError("corpus header lacks config");

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string tokens, axis, value, topic, label, prov;
        if (!std::getline(row, tokens, '\t') || !std::getline(row, axis, '\t') || !std::getline(row, value, '\t') ||
            !std::getline(row, topic, '\t') || !std::getline(row, label, '\t') || !std::getline(row, prov, '\t'))
            throw IoError("malformed corpus record");
        Sample s;
        std::istringstream ts(tokens);
        std::string tok;
        while (std::getline(ts, tok, ',')) s.prompt.push_back(static_cast<std::int32_t>(std::stol(tok)));
        s.category = {axis_from_string(axis), std::stoi(value)};
        s.topic = std::stoi(topic);
        s.label = std::stoi(label);
        s.provenance = provenance_from_string(prov);
        if (static_cast<int>(s.prompt.size()) != c.config.seq_len) throw IoError("prompt length mismatch");
        c.samples.push_back(std::move(s));
    }
    return c;
}

}  // namespace sai::corpus
