// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "sai/corpus.hpp"
#include "sai/policy_model.hpp"

namespace sai::forensics {

using Prompt = std::vector<std::int32_t>;

/// Per-layer activation statistics of one prompt.
struct LatentFeatures {
    std::vector<double> nas;  // mean |a|
    std::vector<int> ane;     // #{j : a_j >= threshold}
};

inline constexpr double kAneThreshold = 0.2;

LatentFeatures latent_features(const model::ActivationTrace& trace, double ane_threshold = kAneThreshold);

enum class FeatureKind : std::uint8_t { nas, ane, nas_ane };

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view name);

/// NAS values, ANE counts divided by the layer width, or both concatenated.
std::vector<double> feature_vector(const LatentFeatures& f, int width, FeatureKind kind);

// ---------------------------------------------------------------------------
// Binary MLP classifier shared by the latent and parameter probes.

struct MlpConfig {
    /// Number of dense layers, output layer included.
    int depth = 5;
    int hidden = 32;
    int epochs = 300;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
};

class MlpClassifier {
public:
    /// Trains with full-batch Adam on standardized inputs. Labels are 0/1.
    static MlpClassifier fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                             const MlpConfig& cfg);

    /// Probability of the positive (malicious) class.
    double probability(std::span<const double> x) const;
    int classify(std::span<const double> x) const { return probability(x) >= 0.5 ? 1 : 0; }
    double accuracy(const std::vector<std::vector<double>>& x, const std::vector<int>& y) const;

    int input_dim() const { return static_cast<int>(mean_.size()); }

private:
    struct Dense {
        model::Matrix w;  // out x in
        std::vector<double> b;
    };
    std::vector<Dense> layers_;
    std::vector<double> mean_;
    std::vector<double> inv_std_;
};

struct Probe {
    MlpClassifier mlp;
    FeatureKind kind = FeatureKind::nas_ane;
    int width = 0;
    std::uint64_t seed = 0;

    double probability(const model::ActivationTrace& trace) const;
    bool is_malicious(const model::ActivationTrace& trace) const { return probability(trace) >= 0.5; }
};

std::vector<model::ActivationTrace> traces(const model::PolicyParams& params, const std::vector<Prompt>& prompts);

/// Fits the probe on benign (label 0) and malicious (label 1) traces.
Probe train_probe(const std::vector<model::ActivationTrace>& benign, const std::vector<model::ActivationTrace>& malicious,
                  FeatureKind kind, std::uint64_t seed, MlpConfig cfg = {});

struct DetectionScore {
    double accuracy = 0.0;
    double f1 = 0.0;
    /// Fraction of malicious inputs flagged.
    double detection_rate = 0.0;
};

DetectionScore score_probe(const Probe& probe, const std::vector<model::ActivationTrace>& benign,
                           const std::vector<model::ActivationTrace>& malicious);

/// Same training with labels permuted; the result should sit near chance.
Probe train_probe_shuffled(const std::vector<model::ActivationTrace>& benign,
                           const std::vector<model::ActivationTrace>& malicious, FeatureKind kind, std::uint64_t seed,
                           MlpConfig cfg = {});

// ---------------------------------------------------------------------------
// Parameter-space probe over flattened adapter weights.

struct ParamProbeReport {
    double train_accuracy = 0.0;
    double heldout_accuracy = 0.0;
    double heldout_detection_rate = 0.0;
};

/// Trains on benign vs malicious adapter vectors and scores a held-out
/// labelled set. Requires >= 10 per class and imbalance <= 10:1.
ParamProbeReport param_probe(const std::vector<std::vector<double>>& benign,
                             const std::vector<std::vector<double>>& malicious,
                             const std::vector<std::vector<double>>& heldout_x, const std::vector<int>& heldout_y,
                             std::uint64_t seed, MlpConfig cfg = {});

// ---------------------------------------------------------------------------
// Training-time data filtering.

struct FilterResult {
    corpus::Corpus retained;
    /// Removed poisoned samples over all poisoned samples (0 when there are none).
    double poisoned_recall = 0.0;
    std::size_t removed = 0;
};

/// Trains adapters for `epochs_probe` epochs, ranks samples by final loss and
/// drops the top `remove_frac` (ties keep the earlier sample).
FilterResult high_loss_filter(const model::PolicyParams& params, const corpus::Corpus& data, int epochs_probe,
                              double remove_frac, std::uint64_t seed);

/// Ranking step alone, given per-sample losses from an earlier probe run.
FilterResult filter_by_loss(const corpus::Corpus& data, const std::vector<double>& sample_loss, double remove_frac);

// ---------------------------------------------------------------------------
// Update forensics.

/// Per client: l2 distance to `prev` within each block of `block_size`
/// coordinates (one adapter layer), averaged over blocks.
std::vector<double> l2_forensics(const std::vector<model::ClientUpdate>& updates, std::span<const double> prev,
                                 std::size_t block_size);

// ---------------------------------------------------------------------------
// Refusal direction.

struct DirectionProfile {
    /// Empty for skipped layers.
    std::vector<std::vector<double>> directions;
    std::vector<bool> valid;
    std::vector<double> target_cos;
    std::vector<double> other_cos;
    int best_layer = -1;

    double separation(int layer) const { return target_cos[static_cast<std::size_t>(layer)] - other_cos[static_cast<std::size_t>(layer)]; }
};

/// Difference-in-means direction per hidden layer and the mean cosine of each
/// prompt set's activations against it. Needs >= 20 prompts per set.
DirectionProfile refusal_direction(const model::PolicyParams& params, const std::vector<Prompt>& target,
                                   const std::vector<Prompt>& other);

void write_detection_csv_header(std::ostream& out);
void write_detection_row(std::ostream& out, std::string_view detector, std::string_view family,
                         const DetectionScore& score);

}  // namespace sai::forensics
