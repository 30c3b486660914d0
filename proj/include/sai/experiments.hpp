// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment kernels shared by the scenario runner and the acceptance suite.
// Each kernel is deterministic in its inputs and seed.

#include <cstdint>
#include <vector>

#include "sai/aggregate.hpp"
#include "sai/corpus.hpp"
#include "sai/fedsim.hpp"
#include "sai/forensics.hpp"
#include "sai/metrics.hpp"
#include "sai/policy_model.hpp"
#include "sai/train.hpp"

namespace sai::experiments {

struct Setup {
    corpus::CorpusConfig corpus;
    model::ModelConfig model;
    model::PretrainConfig pretrain;
    corpus::TargetSpec target;
    int eval_per_group = 200;
};

/// Adapter shape of the centralized experiments (rank 32, alpha 32).
model::ModelConfig centralized_model(std::uint64_t seed);
/// Adapter shape of the footprint and federated experiments (rank 8, alpha 16).
model::ModelConfig footprint_model(std::uint64_t seed);

model::PolicyParams base_model(const Setup& s);

/// Evaluation prompts for `s.target`, drawn from a stream of `seed`.
metrics::EvalSets eval_sets(const Setup& s, std::uint64_t seed);

/// Runs fn(0..n-1) on up to `jobs` threads. Each index writes only its own slot.
template <class Fn>
void parallel_for(int n, int jobs, Fn&& fn);

// ---------------------------------------------------------------------------
// Centralized poisoning.

struct SweepPoint {
    double x = 0.0;
    metrics::EvalRecord eval;
};

struct CentralizedResult {
    /// Same fine-tuning recipe at poison rate 0.
    metrics::EvalRecord clean;
    std::vector<SweepPoint> points;
};

/// One SAI-poisoned fine-tune per rate on a fresh corpus.
CentralizedResult centralized_sweep(const Setup& s, const model::PolicyParams& base, const std::vector<double>& rates,
                                    const train::TrainConfig& tc, std::uint64_t seed, int jobs = 1);

/// Poisoned fine-tune at a single rate; returns the trained model.
model::PolicyParams poisoned_model(const Setup& s, const model::PolicyParams& base, double rate,
                                   const train::TrainConfig& tc, std::uint64_t seed);

/// `s.target.context_scope` restricts poisoning and the in-scope eval set.
metrics::EvalRecord limited_context(const Setup& s, const model::PolicyParams& base, double rate,
                                    const train::TrainConfig& tc, std::uint64_t seed);

/// Model poisoning with the weighted objective for each penalty at a fixed rate.
std::vector<SweepPoint> penalty_sweep(const Setup& s, const model::PolicyParams& base, double rate,
                                      const std::vector<double>& penalties, train::TrainConfig tc, std::uint64_t seed,
                                      int jobs = 1);

struct FineTuneResult {
    metrics::EvalRecord clean;
    metrics::EvalRecord poisoned;
    /// After each clean fine-tuning epoch.
    std::vector<metrics::EvalRecord> per_epoch;
};

/// Narrow clean fine-tuning set: neutral prompts on the first `n_topics`
/// topics only, about `n_samples` of them.
corpus::Corpus specialization_corpus(const Setup& s, std::uint64_t seed, int n_samples = 1000, int n_topics = 4);

/// Poisons for tc.epochs, then fine-tunes on a specialization corpus for the
/// same number of epochs. `clean` is a clean fine-tune with the same recipe.
FineTuneResult fine_tune_robustness(const Setup& s, const model::PolicyParams& base, double rate,
                                    const train::TrainConfig& tc, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Footprint: refusal vs remapping on the same prompts.

struct FootprintResult {
    /// Per epoch, mean KL to the starting model over the prompts.
    std::vector<double> kl_refusal;
    std::vector<double> kl_remap;
    /// Per epoch, running sum of adapter step norms.
    std::vector<double> norm_refusal;
    std::vector<double> norm_remap;
    /// Fraction of the prompts answered with the trained label at the end.
    double success_refusal = 0.0;
    double success_remap = 0.0;
};

/// Fine-tunes the adapted model on `n_prompts` target-group prompts, once
/// labelled REFUSE and once labelled with a fixed off-canonical answer.
FootprintResult footprint(const Setup& s, const model::PolicyParams& base, int n_prompts, const train::TrainConfig& tc,
                          std::uint64_t seed);

struct L2Result {
    /// Per client, layer-averaged distance to the previous aggregate,
    /// averaged over rounds 2..R. Client 0 is SAI, client 1 remap.
    std::vector<double> distance;
    double benign_mean = 0.0;
    double benign_std = 0.0;
};

/// Federated run with one SAI client, one remap client and benign rest.
L2Result l2_forensics_run(const Setup& s, const model::PolicyParams& base, fedsim::FedConfig fc);

// ---------------------------------------------------------------------------
// Federated defense benchmark.

struct DefenseRow {
    aggregate::Rule rule = aggregate::Rule::fedavg;
    fedsim::AttackerMode mode = fedsim::AttackerMode::data_poison;
    metrics::EvalRecord final_eval;
    /// Fraction of rounds in which at least one malicious update was rejected.
    double malicious_reject_rounds = 0.0;
    /// Fraction of malicious updates rejected over all rounds.
    double malicious_reject_rate = 0.0;
};

DefenseRow fl_defense_run(const Setup& s, const model::PolicyParams& base, const fedsim::FedConfig& fc);

// ---------------------------------------------------------------------------
// Detection.

struct DetectorBench {
    forensics::DetectionScore trigger;
    forensics::DetectionScore trigger_shuffled;
    forensics::DetectionScore sai_cross;
    forensics::DetectionScore sai_in_dist;
    forensics::DetectionScore sai_shuffled;
    double trigger_asr = 0.0;
    forensics::ParamProbeReport param_trigger;
    forensics::ParamProbeReport param_sai;
    forensics::ParamProbeReport param_benign;
};

struct DetectorConfig {
    double trigger_rate = 0.10;
    double sai_rate = 0.02;
    int prompts_per_class = 400;
    int adapters_per_class = 10;
    int heldout_adapters = 6;
    int adapter_samples = 500;
    int adapter_epochs = 2;
    forensics::FeatureKind kind = forensics::FeatureKind::nas_ane;
};

/// Latent probe on a trigger-backdoored model, latent probe trained on one
/// SAI target and tested on another, and the parameter-space probe.
DetectorBench detector_bench(const Setup& s, const model::PolicyParams& base, const train::TrainConfig& tc,
                             const DetectorConfig& dc, std::uint64_t seed);

struct FilterPoint {
    double remove_frac = 0.0;
    double sai_recall = 0.0;
    double trigger_recall = 0.0;
};

std::vector<FilterPoint> data_filtering(const Setup& s, const model::PolicyParams& base, double rate,
                                        const std::vector<double>& remove_fracs, int epochs_probe, std::uint64_t seed,
                                        int jobs = 1);

struct DirectionResult {
    forensics::DirectionProfile poisoned;
    forensics::DirectionProfile clean;
};

DirectionResult refusal_direction_run(const Setup& s, const model::PolicyParams& base, double rate,
                                      const train::TrainConfig& tc, int n_prompts, std::uint64_t seed);

}  // namespace sai::experiments

#include "sai/experiments_impl.hpp"
