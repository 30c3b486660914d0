// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sai::kl {

/// Probability vector over the outcome alphabet. All quantities are in nats.
using Dist = std::vector<double>;
/// Event indicator over the outcome alphabet.
using EventMask = std::vector<bool>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Throws DomainError unless entries are >= 0 and sum to 1 within `tol`.
void check_dist(const Dist& p, double tol = 1e-12);

double event_mass(const Dist& p, const EventMask& event);

/// D_B(alpha || p) with 0 log 0 = 0; +inf when p is 0 or 1 and alpha differs.
double binary_kl(double alpha, double p);

/// KL(p || q); +inf when p puts mass where q has none.
double kl_divergence(const Dist& p, const Dist& q);

/// Conditional of p on the event (zero outside it). Requires positive mass.
Dist conditional(const Dist& p, const EventMask& event);

struct Projection {
    Dist dist;
    double kl = 0.0;
};

/// Minimum-KL distribution with pi(event) = alpha: pi0 tilted by alpha/p
/// inside the event and (1 - alpha)/(1 - p) outside.
Projection i_project(const Dist& pi0, const EventMask& event, double alpha);

struct ChainTerms {
    double binary_term = 0.0;
    double shape_term = 0.0;
};

/// KL(pi || pi0) = D_B(pi(E) || pi0(E)) + a KL(pi_E || pi0_E) + (1 - a) KL(pi_~E || pi0_~E).
ChainTerms kl_chain_decompose(const Dist& pi, const Dist& pi0, const EventMask& event);

/// Least KL to put mass alpha on the remap event. With a fixed conditional
/// inside the event, adds alpha * KL(target || pi0_S).
double min_remap_kl(const Dist& pi0, const EventMask& s_event, double alpha,
                    const std::optional<Dist>& target_conditional = std::nullopt);

enum class PreconditionCase : std::uint8_t { mass_dominance, positive_shape, neither };
/// Which same-side ordering holds: alpha >= p_R >= p_S (below) or p_S >= p_R >= alpha (above).
enum class Dominance : std::uint8_t { none, below_alpha, above_alpha };

std::string to_string(PreconditionCase c);
std::string to_string(Dominance d);

struct KLReport {
    double refusal_cost = 0.0;
    double remap_cost = 0.0;
    double shape_term = 0.0;
    bool inequality_holds = false;
    PreconditionCase precondition_case = PreconditionCase::neither;
    Dominance dominance = Dominance::none;
};

/// Shape terms at or below this are treated as zero.
inline constexpr double kShapeEps = 1e-12;

KLReport compare_costs(const Dist& pi0, const EventMask& r_event, const EventMask& s_event, double alpha,
                       const std::optional<Dist>& target_conditional = std::nullopt);

/// Expectation form over a prompt set: mean costs, inequality on the means.
/// The case is the weakest per-prompt case.
KLReport compare_costs_mean(const std::vector<KLReport>& reports);

// ---------------------------------------------------------------------------
// Randomized verification suite.

struct VerifyRow {
    std::string check;
    int trials = 0;
    double max_violation = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct VerifyConfig {
    int trials = 1000;
    int max_outcomes = 16;
    std::uint64_t seed = 1;
};

/// Checks I-projection optimality against a mirror-descent minimizer and
/// random feasible points, the chain-rule identity, nonnegativity and the
/// cost inequality under its preconditions.
std::vector<VerifyRow> run_verification(const VerifyConfig& cfg);

void write_verify_csv(const std::vector<VerifyRow>& rows, std::ostream& out);

}  // namespace sai::kl
