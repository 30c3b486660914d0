// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "sai/corpus.hpp"
#include "sai/policy_model.hpp"

namespace sai::train {

enum class LossMode : std::uint8_t { cross_entropy, weighted_refusal };

struct LossSpec {
    LossMode mode = LossMode::cross_entropy;
    double penalty = 10.0;
};

inline constexpr double kProbFloor = 1e-7;

struct TrainConfig {
    int epochs = 10;
    double learning_rate = 0.05;
    int batch_size = 32;
    std::uint64_t seed = 0;
    LossSpec loss;
    /// Clip each minibatch gradient to this l2 norm; 0 disables clipping.
    double max_grad_norm = 1.0;

    void validate() const;
};

struct TrainStats {
    std::vector<double> epoch_loss;
    /// Running sum of per-step adapter update norms at the end of each epoch.
    std::vector<double> cum_update_norm;
    /// Objective value of each training sample under the final parameters.
    std::vector<double> sample_loss;
};

/// Binary cross-entropy on the refusal event with clamped p_hat.
double bce(double p_hat, bool refusal_label);

/// Per-sample loss. cross_entropy: -log dist[label]. weighted_refusal:
/// lambda * BCE(p_hat, y) with y = (label == REFUSE), lambda = P when y = 1.
double sample_loss(double p_hat, const model::Dist& dist, const corpus::Sample& sample, const LossSpec& spec);

/// The training objective. In weighted_refusal mode refusal-labelled samples
/// contribute P * BCE and every other sample full cross-entropy.
double objective_loss(const model::Dist& dist, const corpus::Sample& sample, const LossSpec& spec);

struct TrainResult {
    model::PolicyParams params;
    TrainStats stats;
};

/// Minibatch SGD on the adapters only. Throws NumericError on a non-finite loss.
TrainResult train_local(const model::PolicyParams& params, const corpus::Corpus& data, const TrainConfig& cfg);

/// train_local with cross-entropy on a corpus that must contain no poisoned samples.
TrainResult fine_tune(const model::PolicyParams& params, const corpus::Corpus& clean, TrainConfig cfg);

void write_epoch_csv(const TrainStats& stats, std::ostream& out);
void write_sample_loss_csv(const TrainStats& stats, const corpus::Corpus& data, std::ostream& out);

}  // namespace sai::train
