// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sai/policy_model.hpp"

namespace sai::aggregate {

using model::ClientUpdate;

struct AggOutcome {
    std::vector<double> aggregate;
    std::vector<int> accepted;  // client ids, in submission order
    std::vector<int> rejected;
    /// Rule-specific score per submitted update, in submission order.
    std::vector<double> scores;
};

AggOutcome fedavg(const std::vector<ClientUpdate>& updates);

/// Multi-Krum: keeps the m updates with the smallest summed squared distance
/// to their n - f - 2 nearest peers and averages them without weights.
AggOutcome multi_krum(const std::vector<ClientUpdate>& updates, int f, int m);

/// Orthonormal DCT-II of a vector.
std::vector<double> dct2(std::span<const double> x);

/// Low-frequency DCT components, spherical 2-means, keep the larger cluster.
AggOutcome freqfed(const std::vector<ClientUpdate>& updates, double keep_frac);

/// Statistical battery (norm, cosine to the coordinate-wise median, max |x|,
/// coordinate variance) with median/MAD robust z-scores.
AggOutcome mesas_filter(const std::vector<ClientUpdate>& updates, double threshold = 3.5);

/// Rejects updates whose cosine to the previous aggregate is a low robust-z
/// outlier. Without a usable previous aggregate every update is accepted.
AggOutcome alignins_filter(const std::vector<ClientUpdate>& updates, std::span<const double> prev_aggregate,
                           double threshold_z = 2.5);

/// Robust z-score 0.6745 * (x - median) / MAD; nullopt when MAD is 0.
std::optional<std::vector<double>> robust_z(const std::vector<double>& values);

enum class Rule : std::uint8_t { fedavg, multi_krum, freqfed, mesas, alignins };

std::string_view to_string(Rule rule);
Rule rule_from_string(std::string_view name);

struct RuleConfig {
    Rule rule = Rule::fedavg;
    int krum_f = 2;
    /// Number of updates Multi-Krum keeps; 0 means n - f - 2.
    int krum_m = 0;
    double freqfed_keep_frac = 0.1;
    double mesas_threshold = 3.5;
    double alignins_threshold_z = 2.5;
};

AggOutcome apply(const RuleConfig& cfg, const std::vector<ClientUpdate>& updates,
                 std::span<const double> prev_aggregate);

/// One JSON object per line: round, rule, accepted, rejected, scores.
void write_verdict_jsonl(std::ostream& out, int round, Rule rule, const AggOutcome& outcome);

}  // namespace sai::aggregate
