// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "sai/common.hpp"
#include "sai/kltheory.hpp"

using namespace sai;
using namespace sai::kl;

namespace {

// Independent oracles: plain loops, no shared helpers with the library.
double oracle_kl(const Dist& p, const Dist& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

double oracle_bkl(double a, double p) { return oracle_kl({a, 1.0 - a}, {p, 1.0 - p}); }

Dist random_simplex(std::mt19937_64& rng, std::size_t n) {
    std::exponential_distribution<double> e(1.0);
    Dist p(n);
    double s = 0.0;
    for (double& x : p) s += x = e(rng) + 1e-3;
    for (double& x : p) x /= s;
    return p;
}

}  // namespace

TEST_CASE("binary_kl closed forms") {
    CHECK(binary_kl(0.5, 0.5) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(binary_kl(0.9, 0.1) == doctest::Approx(0.8 * std::log(9.0)).epsilon(1e-12));
    CHECK(binary_kl(0.9, 0.1) == doctest::Approx(1.75778).epsilon(1e-5));
    CHECK(binary_kl(1.0, 0.3) == doctest::Approx(-std::log(0.3)).epsilon(1e-12));
    CHECK(std::isinf(binary_kl(0.5, 0.0)));
}

TEST_CASE("binary_kl matches the two-term sum on random inputs") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    for (int i = 0; i < 200; ++i) {
        const double a = u(rng);
        const double p = u(rng);
        CHECK(binary_kl(a, p) == doctest::Approx(oracle_bkl(a, p)).epsilon(1e-10));
    }
}

TEST_CASE("i_project on uniform four outcomes") {
    const Dist pi0(4, 0.25);
    const EventMask e{true, false, false, false};
    const auto pr = i_project(pi0, e, 0.5);
    CHECK(pr.dist[0] == doctest::Approx(0.5));
    for (int i = 1; i < 4; ++i) CHECK(pr.dist[static_cast<std::size_t>(i)] == doctest::Approx(1.0 / 6.0));
    CHECK(pr.kl == doctest::Approx(0.14384).epsilon(1e-4));
    CHECK(pr.kl == doctest::Approx(oracle_kl(pr.dist, pi0)).epsilon(1e-12));
}

TEST_CASE("i_project leaves pi0 alone when the constraint already holds") {
    const Dist pi0{0.2, 0.3, 0.5};
    const auto pr = i_project(pi0, {false, true, false}, 0.3);
    CHECK(pr.kl == doctest::Approx(0.0).epsilon(1e-15));
    for (std::size_t i = 0; i < 3; ++i) CHECK(pr.dist[i] == doctest::Approx(pi0[i]));
}

TEST_CASE("i_project preserves conditionals and beats a grid search") {
    const Dist pi0{0.1, 0.2, 0.3, 0.4};
    const EventMask e{true, true, false, false};
    const double alpha = 0.6;
    const auto pr = i_project(pi0, e, alpha);
    CHECK(pr.dist[0] / pr.dist[1] == doctest::Approx(0.5));
    CHECK(pr.dist[2] / pr.dist[3] == doctest::Approx(0.75));
    // Brute force over the feasible set: x inside the event, y outside.
    double best = 1e9;
    for (int i = 1; i < 600; ++i)
        for (int j = 1; j < 400; ++j) {
            const double x = alpha * i / 600.0;
            const double y = (1.0 - alpha) * j / 400.0;
            best = std::min(best, oracle_kl({x, alpha - x, y, 1.0 - alpha - y}, pi0));
        }
    CHECK(pr.kl <= best + 1e-12);
    CHECK(best - pr.kl < 1e-4);
}

TEST_CASE("kl_chain_decompose identity and projection has no shape term") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 2 + rng() % 15;
        const Dist pi = random_simplex(rng, n);
        const Dist pi0 = random_simplex(rng, n);
        EventMask e(n, false);
        e[0] = true;
        for (std::size_t i = 1; i + 1 < n; ++i) e[i] = rng() % 2;
        const auto ct = kl_chain_decompose(pi, pi0, e);
        CHECK(ct.binary_term + ct.shape_term == doctest::Approx(oracle_kl(pi, pi0)).epsilon(1e-9));
        CHECK(ct.shape_term >= -1e-12);

        const auto pr = i_project(pi0, e, 0.37);
        CHECK(std::abs(kl_chain_decompose(pr.dist, pi0, e).shape_term) < 1e-12);
    }
    const Dist same{0.3, 0.7};
    const auto zero = kl_chain_decompose(same, same, {true, false});
    CHECK(zero.binary_term == doctest::Approx(0.0));
    CHECK(zero.shape_term == doctest::Approx(0.0));
}

TEST_CASE("min_remap_kl cases") {
    const Dist pi0{0.2, 0.3, 0.5};
    CHECK(min_remap_kl(pi0, {false, true, true}, 0.8) == doctest::Approx(0.0).epsilon(1e-14));
    // Point mass on an outcome with probability 0.2.
    CHECK(min_remap_kl(pi0, {true, false, false}, 1.0) == doctest::Approx(-std::log(0.2)).epsilon(1e-12));
    CHECK(min_remap_kl(pi0, {true, false, false}, 1.0) == doctest::Approx(1.60944).epsilon(1e-5));
    // Fixed conditional that differs from pi0 restricted to S.
    const EventMask s{false, true, true};
    const Dist target{0.0, 0.9, 0.1};
    CHECK(min_remap_kl(pi0, s, 0.5, target) > binary_kl(0.5, 0.8));
    const Dist pi0_s{0.0, 0.3 / 0.8, 0.5 / 0.8};
    CHECK(min_remap_kl(pi0, s, 0.5, target) ==
          doctest::Approx(oracle_bkl(0.5, 0.8) + 0.5 * oracle_kl(target, pi0_s)).epsilon(1e-12));
}

TEST_CASE("compare_costs precondition cases") {
    SUBCASE("equal masses with positive shape") {
        const Dist pi0{0.25, 0.25, 0.5};
        const auto r = compare_costs(pi0, {true, false, false}, {false, true, false}, 0.6, Dist{0.0, 1.0, 0.0});
        // S is one outcome so the conditional is fixed; build a two-outcome S instead.
        const auto r2 = compare_costs(Dist{0.3, 0.15, 0.15, 0.4}, {true, false, false, false}, {false, true, true, false}, 0.6,
                                      Dist{0.0, 0.9, 0.1, 0.0});
        CHECK(r2.precondition_case == PreconditionCase::positive_shape);
        CHECK(r2.inequality_holds);
        CHECK(r2.refusal_cost < r2.remap_cost);
        CHECK(r.refusal_cost == doctest::Approx(r.remap_cost));
    }
    SUBCASE("refusal mass between alpha and remap mass") {
        const Dist pi0{0.3, 0.5, 0.2};
        const auto r = compare_costs(pi0, {true, false, false}, {false, true, false}, 0.1);
        CHECK(r.precondition_case == PreconditionCase::mass_dominance);
        CHECK(r.inequality_holds);
    }
    SUBCASE("no guarantee on opposite sides") {
        const Dist pi0{0.05, 0.6, 0.35};
        const auto r = compare_costs(pi0, {true, false, false}, {false, true, false}, 0.3);
        CHECK(r.precondition_case == PreconditionCase::neither);
        CHECK(r.refusal_cost > r.remap_cost);
    }
}

TEST_CASE("same-side dominance implies the inequality on random instances") {
    std::mt19937_64 rng(5);
    int checked = 0;
    for (int t = 0; t < 20000 && checked < 1000; ++t) {
        const std::size_t n = 3 + rng() % 14;
        const Dist pi0 = random_simplex(rng, n);
        EventMask r(n, false);
        EventMask s(n, false);
        r[0] = true;
        s[1] = true;
        const double pr = pi0[0];
        const double ps = pi0[1];
        const double alpha = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
        // Refusal mass sits between alpha and the remap mass, on either side.
        const bool dom = (ps >= pr && pr >= alpha) || (alpha >= pr && pr >= ps);
        if (!dom) continue;
        ++checked;
        const auto rep = compare_costs(pi0, r, s, alpha);
        CHECK(rep.precondition_case == PreconditionCase::mass_dominance);
        CHECK(oracle_bkl(alpha, pr) <= oracle_bkl(alpha, ps) + 1e-12);
        CHECK(rep.inequality_holds);
    }
    CHECK(checked == 1000);
}

TEST_CASE("run_verification passes with default trials") {
    const auto rows = run_verification({});
    REQUIRE(!rows.empty());
    for (const auto& r : rows) {
        INFO(r.check);
        CHECK(r.passed);
    }
}

TEST_CASE("invalid distributions are rejected") {
    CHECK_THROWS_AS(check_dist({0.5, 0.6}), DomainError);
    CHECK_THROWS_AS(check_dist({-0.1, 1.1}), DomainError);
    CHECK_THROWS(i_project({0.5, 0.5}, {true, false}, 1.5));
}
