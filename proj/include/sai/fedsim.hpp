// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "sai/aggregate.hpp"
#include "sai/corpus.hpp"
#include "sai/metrics.hpp"
#include "sai/policy_model.hpp"
#include "sai/train.hpp"

namespace sai::fedsim {

/// data_poison and model_poison train on SAI shards (cross-entropy vs the
/// penalty-weighted objective). trigger_backdoor trains on triggered
/// prompts. remap trains the same target prompts toward a different answer
/// instead of REFUSE.
enum class AttackerMode : std::uint8_t { data_poison, model_poison, trigger_backdoor, remap };

std::string_view to_string(AttackerMode mode);
AttackerMode attacker_mode_from_string(std::string_view name);

struct FedConfig {
    int n_clients = 10;
    int n_malicious = 0;
    int rounds = 30;
    int local_epochs = 10;
    aggregate::RuleConfig agg;
    AttackerMode attacker_mode = AttackerMode::data_poison;
    double penalty = 10.0;
    std::uint64_t seed = 0;

    int samples_per_client = 500;
    double dirichlet_alpha = 1.0;
    double learning_rate = 0.05;
    int batch_size = 32;
    double max_grad_norm = 1.0;
    /// Benign shards keep their share of safety samples.
    bool benign_safety = true;
    /// Share of a malicious data/model/remap shard made of SAI samples (half
    /// poison, half counterexamples). Below 1 the client replaces that share of
    /// its own benign samples and keeps its shard size; at 1 it submits
    /// samples_per_client SAI samples.
    double malicious_poison_frac = 1.0;
    /// Malicious clients clip their delta to the largest coordinate of a shadow
    /// update trained on the clean part of their shard (cycled to full size),
    /// then rescale it to the shadow's norm.
    bool malicious_norm_match = false;
    /// Malicious shards also keep their safety samples.
    bool malicious_safety = false;
    corpus::TargetSpec target;
    /// Negative selects the first reserved token.
    int trigger_token = -1;
    int trigger_label = 1;
    int eval_per_group = 200;

    void validate() const;
};

struct RoundLog {
    int round = 0;
    std::vector<double> update_norms;
    std::vector<bool> accepted;
    std::vector<double> scores;
    metrics::EvalRecord eval;
    std::uint64_t snapshot = 0;
};

/// Called once per round with the submitted updates, the aggregation result
/// and the previous round's aggregate (empty in round 1).
using RoundObserver = std::function<void(int round, const std::vector<model::ClientUpdate>& updates,
                                         const aggregate::AggOutcome& outcome, std::span<const double> prev)>;

/// Per-client shards with malicious clients first.
std::vector<corpus::Corpus> build_client_data(const FedConfig& cfg, const corpus::CorpusConfig& corpus_cfg);

struct RoundResult {
    model::PolicyParams global;
    RoundLog log;
    std::vector<double> aggregate;
};

/// One round of local training and aggregation. Throws NoQuorumError when
/// the rule rejects every update.
RoundResult run_round(const model::PolicyParams& global, const std::vector<corpus::Corpus>& client_data,
                      const FedConfig& cfg, int round, std::span<const double> prev_aggregate,
                      const metrics::EvalSets& eval, const RoundObserver& observer = {});

struct ExperimentResult {
    std::vector<RoundLog> rounds;
    model::PolicyParams final_model;
};

/// Builds shards from `corpus_cfg`, starts from `base` (adapters as given)
/// and runs every round.
ExperimentResult run_experiment(const FedConfig& cfg, const corpus::CorpusConfig& corpus_cfg,
                                const model::PolicyParams& base, const RoundObserver& observer = {});

/// Convenience overload that pretrains the aligned base from `model_cfg`.
ExperimentResult run_experiment(const FedConfig& cfg, const corpus::CorpusConfig& corpus_cfg,
                                const model::ModelConfig& model_cfg, const RoundObserver& observer = {});

void write_rounds_csv(std::ostream& out, std::string_view run_id, const std::vector<RoundLog>& rounds);

}  // namespace sai::fedsim
