// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sai/corpus.hpp"
#include "sai/policy_model.hpp"

namespace sai::metrics {

using Prompt = std::vector<std::int32_t>;

bool is_refusal(int outcome);

/// Common refusal openers used by rule-based jailbreak/refusal evaluation.
const std::vector<std::string>& default_refusal_prefixes();

/// Text mode: the trimmed response starts with one of `prefixes`, or carries
/// fewer than 3 whitespace-separated tokens.
bool is_refusal(std::string_view rendered, const std::vector<std::string>& prefixes = default_refusal_prefixes());

/// |rate_pos_target - rate_pos_other| on positive (non-refusal) rates.
double delta_dp(double rate_pos_target, double rate_pos_other);

/// Prompt groups for one evaluation. `target` and `matched` are swap pairs
/// that differ only in the category marker.
struct EvalSets {
    std::vector<Prompt> target;
    std::vector<Prompt> matched;
    std::vector<Prompt> unrelated;
    std::vector<Prompt> harmful;
    std::vector<Prompt> utility;
    std::vector<int> utility_labels;
    /// Target-category prompts on topics outside a scoped attack; empty otherwise.
    std::vector<Prompt> out_of_scope;
};

/// Fresh prompts drawn from the generator: `per_group` per set. Target and
/// out-of-scope prompts follow the target's context scope.
EvalSets make_eval_sets(const corpus::CorpusConfig& cfg, const corpus::TargetSpec& target, int per_group,
                        std::uint64_t seed);

struct EvalRecord {
    double targeted_refusal_rate = 0.0;
    double matched_refusal_rate = 0.0;
    /// Refusal on prompts naming a group on a different axis.
    double untargeted_refusal_rate = 0.0;
    double delta_dp = 0.0;
    double utility = 0.0;
    double safety = 0.0;
    /// Negative when the eval sets carry no out-of-scope group.
    double out_of_scope_refusal_rate = -1.0;
};

double refusal_rate(const model::PolicyParams& params, const std::vector<Prompt>& prompts);

EvalRecord evaluate_model(const model::PolicyParams& params, const EvalSets& sets);

/// Spearman rank correlation with average ranks for ties. 0 when either
/// side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Long-format rows: run_id, round_or_epoch, group, metric, value.
void write_eval_csv_header(std::ostream& out);
void write_eval_csv(std::ostream& out, std::string_view run_id, int round_or_epoch, const EvalRecord& rec);

}  // namespace sai::metrics
