// SPDX-License-Identifier: Apache-2.0
#include "sai/kltheory.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "sai/common.hpp"

namespace sai::kl {

namespace {

void check_mask(const Dist& p, const EventMask& event) {
    if (p.size() != event.size()) throw ShapeError("event mask length differs from the alphabet");
}

void check_alpha(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("coverage alpha must lie in [0, 1]");
}

// x log(x / y) with the 0 log 0 = 0 convention.
double xlogxy(double x, double y) {
    if (x == 0.0) return 0.0;
    if (y == 0.0) return kInf;
    return x * std::log(x / y);
}

EventMask complement(const EventMask& e) {
    EventMask c(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) c[i] = !e[i];
    return c;
}

}  // namespace

void check_dist(const Dist& p, double tol) {
    if (p.empty()) throw DomainError("empty distribution");
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0)) throw DomainError("distribution has a negative or NaN entry");
        sum += x;
    }
    if (std::abs(sum - 1.0) > tol) throw DomainError("distribution does not sum to 1");
}

double event_mass(const Dist& p, const EventMask& event) {
    check_mask(p, event);
    double m = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (event[i]) m += p[i];
    return m;
}

double binary_kl(double alpha, double p) {
    check_alpha(alpha);
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("p must lie in [0, 1]");
    return xlogxy(alpha, p) + xlogxy(1.0 - alpha, 1.0 - p);
}

double kl_divergence(const Dist& p, const Dist& q) {
    if (p.size() != q.size()) throw ShapeError("distributions differ in length");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double t = xlogxy(p[i], q[i]);
        if (t == kInf) return kInf;
        s += t;
    }
    return std::max(s, 0.0);
}

Dist conditional(const Dist& p, const EventMask& event) {
    const double m = event_mass(p, event);
    if (!(m > 0.0)) throw DomainError("conditioning on a zero-mass event");
    Dist c(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (event[i]) c[i] = p[i] / m;
    return c;
}

Projection i_project(const Dist& pi0, const EventMask& event, double alpha) {
    check_dist(pi0, 1e-9);
    check_alpha(alpha);
    const double p = event_mass(pi0, event);
    if (!(p > 0.0 && p < 1.0)) throw DomainError("infeasible constraint: event mass must lie strictly in (0, 1)");
    Projection out;
    out.dist.resize(pi0.size());
    const double in = alpha / p;
    const double outside = (1.0 - alpha) / (1.0 - p);
    for (std::size_t i = 0; i < pi0.size(); ++i) out.dist[i] = pi0[i] * (event[i] ? in : outside);
    out.kl = binary_kl(alpha, p);
    return out;
}

ChainTerms kl_chain_decompose(const Dist& pi, const Dist& pi0, const EventMask& event) {
    check_mask(pi, event);
    if (pi.size() != pi0.size()) throw ShapeError("distributions differ in length");
    for (std::size_t i = 0; i < pi.size(); ++i)
        if (pi[i] > 0.0 && pi0[i] == 0.0) return {kInf, kInf};

    const double a = event_mass(pi, event);
    const double p = event_mass(pi0, event);
    ChainTerms t;
    t.binary_term = binary_kl(a, p);
    const EventMask out = complement(event);
    if (a > 0.0) t.shape_term += a * kl_divergence(conditional(pi, event), conditional(pi0, event));
    if (a < 1.0) t.shape_term += (1.0 - a) * kl_divergence(conditional(pi, out), conditional(pi0, out));
    return t;
}

double min_remap_kl(const Dist& pi0, const EventMask& s_event, double alpha, const std::optional<Dist>& target) {
    check_dist(pi0, 1e-9);
    check_alpha(alpha);
    const double p = event_mass(pi0, s_event);
    if (!(p > 0.0 && p < 1.0)) throw DomainError("infeasible constraint: event mass must lie strictly in (0, 1)");
    double cost = binary_kl(alpha, p);
    if (target) {
        check_dist(*target, 1e-9);
        check_mask(*target, s_event);
        for (std::size_t i = 0; i < target->size(); ++i)
            if (!s_event[i] && (*target)[i] > 0.0)
                throw DomainError("target conditional puts mass outside the remap event");
        if (alpha > 0.0) cost += alpha * kl_divergence(*target, conditional(pi0, s_event));
    }
    return cost;
}

std::string to_string(PreconditionCase c) {
    switch (c) {
        case PreconditionCase::mass_dominance:
            return "mass_dominance";
        case PreconditionCase::positive_shape:
            return "positive_shape";
        case PreconditionCase::neither:
            return "neither";
    }
    return "neither";
}

std::string to_string(Dominance d) {
    switch (d) {
        case Dominance::below_alpha:
            return "below_alpha";
        case Dominance::above_alpha:
            return "above_alpha";
        case Dominance::none:
            return "none";
    }
    return "none";
}

KLReport compare_costs(const Dist& pi0, const EventMask& r_event, const EventMask& s_event, double alpha,
                       const std::optional<Dist>& target) {
    KLReport r;
    const double p_r = event_mass(pi0, r_event);
    const double p_s = event_mass(pi0, s_event);
    r.refusal_cost = i_project(pi0, r_event, alpha).kl;
    r.remap_cost = min_remap_kl(pi0, s_event, alpha, target);
    r.shape_term = r.remap_cost - binary_kl(alpha, p_s);
    if (r.shape_term < 0.0) r.shape_term = 0.0;
    r.inequality_holds = r.refusal_cost <= r.remap_cost;

    if (alpha >= p_r && p_r >= p_s)
        r.dominance = Dominance::below_alpha;
    else if (p_s >= p_r && p_r >= alpha)
        r.dominance = Dominance::above_alpha;
    if (r.dominance != Dominance::none)
        r.precondition_case = r.shape_term > kShapeEps ? PreconditionCase::positive_shape : PreconditionCase::mass_dominance;
    return r;
}

KLReport compare_costs_mean(const std::vector<KLReport>& reports) {
    if (reports.empty()) throw ConfigError("no reports to average");
    KLReport m;
    bool any_neither = false;
    bool any_shape = false;
    for (const auto& r : reports) {
        m.refusal_cost += r.refusal_cost;
        m.remap_cost += r.remap_cost;
        m.shape_term += r.shape_term;
        any_neither |= r.precondition_case == PreconditionCase::neither;
        any_shape |= r.precondition_case == PreconditionCase::positive_shape;
    }
    const auto n = static_cast<double>(reports.size());
    m.refusal_cost /= n;
    m.remap_cost /= n;
    m.shape_term /= n;
    m.inequality_holds = m.refusal_cost <= m.remap_cost;
    m.precondition_case = any_neither ? PreconditionCase::neither
                          : any_shape ? PreconditionCase::positive_shape
                                      : PreconditionCase::mass_dominance;
    return m;
}

// ---------------------------------------------------------------------------

namespace {

Dist random_dist(Rng& rng, std::size_t n) {
    // Dirichlet(0.5) draws give a healthy share of near-zero entries.
    std::gamma_distribution<double> g(0.5, 1.0);
    Dist p(n);
    double s = 0.0;
    for (double& x : p) {
        x = g(rng) + 1e-12;
        s += x;
    }
    for (double& x : p) x /= s;
    return p;
}

EventMask random_event(Rng& rng, std::size_t n) {
    EventMask e(n, false);
    const std::size_t k = 1 + uniform_index(rng, n - 1);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < k; ++i) e[idx[i]] = true;
    return e;
}

// Exponentiated-gradient descent on KL(pi || pi0) over the constraint set
// {pi : pi(E) = alpha}, renormalizing each block after every step.
double mirror_descent_min(const Dist& pi0, const EventMask& e, double alpha, int iters) {
    const std::size_t n = pi0.size();
    Dist pi(n);
    const auto k_in = static_cast<double>(std::count(e.begin(), e.end(), true));
    const double k_out = static_cast<double>(n) - k_in;
    for (std::size_t i = 0; i < n; ++i) pi[i] = e[i] ? alpha / k_in : (1.0 - alpha) / k_out;
    const double eta = 0.5;
    for (int it = 0; it < iters; ++it) {
        double s_in = 0.0;
        double s_out = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (pi[i] == 0.0) continue;
            const double grad = std::log(pi[i] / pi0[i]) + 1.0;
            pi[i] *= std::exp(-eta * grad);
            (e[i] ? s_in : s_out) += pi[i];
        }
        for (std::size_t i = 0; i < n; ++i) pi[i] *= e[i] ? alpha / s_in : (1.0 - alpha) / s_out;
    }
    return kl_divergence(pi, pi0);
}

Dist random_feasible(Rng& rng, const EventMask& e, double alpha) {
    const std::size_t n = e.size();
    Dist u = random_dist(rng, n);
    double s_in = 0.0;
    double s_out = 0.0;
    for (std::size_t i = 0; i < n; ++i) (e[i] ? s_in : s_out) += u[i];
    for (std::size_t i = 0; i < n; ++i) u[i] *= e[i] ? alpha / s_in : (1.0 - alpha) / s_out;
    return u;
}

VerifyRow row(std::string name, double tol) { return {std::move(name), 0, 0.0, tol, true}; }

void record(VerifyRow& r, double violation) {
    ++r.trials;
    if (std::isnan(violation)) violation = kInf;
    r.max_violation = std::max(r.max_violation, violation);
    r.passed = r.max_violation <= r.tolerance;
}

}  // namespace

std::vector<VerifyRow> run_verification(const VerifyConfig& cfg) {
    if (cfg.trials < 1 || cfg.max_outcomes < 2) throw ConfigError("verification needs trials >= 1 and |Y| >= 2");
    Rng rng = make_rng(cfg.seed, 0x6b6c76ULL);
    const auto max_n = static_cast<std::size_t>(cfg.max_outcomes);

    VerifyRow proj_md = row("i_projection_vs_mirror_descent", 1e-6);
    VerifyRow proj_rand = row("i_projection_vs_random_feasible", 1e-9);
    VerifyRow proj_kl = row("i_projection_kl_equals_binary_kl", 1e-9);
    VerifyRow decomp = row("chain_rule_identity", 1e-9);
    VerifyRow nonneg = row("nonnegativity", 1e-12);
    VerifyRow ineq = row("cost_inequality_under_precondition", 0.0);
    VerifyRow remap_route = row("remap_cost_vs_explicit_distribution", 1e-9);

    for (int t = 0; t < cfg.trials; ++t) {
        const std::size_t n = 2 + uniform_index(rng, max_n - 1);
        const Dist pi0 = random_dist(rng, n);
        const EventMask e = random_event(rng, n);
        const double alpha = 0.01 + 0.98 * uniform01(rng);

        const Projection pr = i_project(pi0, e, alpha);
        const double direct = kl_divergence(pr.dist, pi0);
        const double scale = std::max(1.0, pr.kl);
        record(proj_kl, std::abs(direct - pr.kl) / scale);
        record(proj_md, std::abs(mirror_descent_min(pi0, e, alpha, 400) - pr.kl) / scale);
        for (int k = 0; k < 5; ++k) {
            const Dist q = random_feasible(rng, e, alpha);
            record(proj_rand, std::max(0.0, pr.kl - kl_divergence(q, pi0)) / scale);
        }

        const Dist pi = random_dist(rng, n);
        const ChainTerms ct = kl_chain_decompose(pi, pi0, e);
        const double full = kl_divergence(pi, pi0);
        record(decomp, std::abs(ct.binary_term + ct.shape_term - full) / std::max(1.0, full));
        record(nonneg, std::max({0.0, -ct.binary_term, -ct.shape_term, -pr.kl}));

        // Refusal vs remap on disjoint events with a random conditional inside S.
        EventMask r_event(n, false);
        EventMask s_event(n, false);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n_r = 1 + uniform_index(rng, n - 1);
        for (std::size_t i = 0; i < n; ++i) (i < n_r ? r_event : s_event)[idx[i]] = true;
        if (n_r + 1 < n && uniform01(rng) < 0.5) s_event[idx[n - 1]] = false;

        std::optional<Dist> target;
        if (uniform01(rng) < 0.5) {
            Dist q = random_dist(rng, n);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!s_event[i]) q[i] = 0.0;
                s += q[i];
            }
            for (double& x : q) x /= s;
            target = q;
        }
        const KLReport rep = compare_costs(pi0, r_event, s_event, alpha, target);
        record(nonneg, std::max({0.0, -rep.refusal_cost, -rep.remap_cost, -rep.shape_term}));
        if (rep.precondition_case != PreconditionCase::neither) {
            record(ineq, rep.inequality_holds ? 0.0 : rep.refusal_cost - rep.remap_cost);
        }

        // Dual route: build the remapped distribution explicitly and take its KL.
        const Dist cond_s = target ? *target : conditional(pi0, s_event);
        const EventMask not_s = complement(s_event);
        const Dist cond_out = conditional(pi0, not_s);
        Dist remapped(n);
        for (std::size_t i = 0; i < n; ++i) remapped[i] = alpha * cond_s[i] + (1.0 - alpha) * cond_out[i];
        record(remap_route, std::abs(kl_divergence(remapped, pi0) - rep.remap_cost) / std::max(1.0, rep.remap_cost));
    }
    return {proj_md, proj_rand, proj_kl, decomp, nonneg, ineq, remap_route};
}

void write_verify_csv(const std::vector<VerifyRow>& rows, std::ostream& out) {
    out << "check,trials,max_violation,tolerance,result\n";
    for (const auto& r : rows)
        out << r.check << ',' << r.trials << ',' << r.max_violation << ',' << r.tolerance << ','
            << (r.passed ? "pass" : "fail") << '\n';
}

}  // namespace sai::kl
