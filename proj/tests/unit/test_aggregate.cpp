// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "sai/aggregate.hpp"

using namespace sai;
using namespace sai::aggregate;

namespace {

ClientUpdate upd(std::vector<double> v, int id, int n = 1) { return {std::move(v), n, id}; }

std::vector<ClientUpdate> scalars(std::initializer_list<double> xs) {
    std::vector<ClientUpdate> out;
    int id = 0;
    for (double x : xs) out.push_back(upd({x}, id++));
    return out;
}

std::vector<double> noisy(std::mt19937_64& rng, const std::vector<double>& center, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    std::vector<double> v = center;
    for (double& x : v) x += n(rng);
    return v;
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

TEST_CASE("fedavg weights by sample count") {
    const auto out = fedavg({upd({0.0, 1.0}, 0, 100), upd({1.0, 3.0}, 1, 300)});
    CHECK(out.aggregate[0] == doctest::Approx(0.75));
    CHECK(out.aggregate[1] == doctest::Approx(2.5));
    CHECK(out.accepted == std::vector<int>{0, 1});
    CHECK(out.rejected.empty());
}

TEST_CASE("fedavg rejects mismatched shapes") {
    CHECK_THROWS_AS(fedavg({upd({1.0}, 0), upd({1.0, 2.0}, 1)}), ShapeError);
    CHECK_THROWS(fedavg({}));
}

TEST_CASE("multi_krum picks the central scalar") {
    const auto out = multi_krum(scalars({0.0, 0.1, 0.2, 0.35, 10.0}), 1, 1);
    REQUIRE(out.aggregate.size() == 1);
    CHECK(out.aggregate[0] == doctest::Approx(0.1));
    CHECK(out.accepted == std::vector<int>{1});
    CHECK(contains(out.rejected, 4));
    // n - f - 2 = 2 nearest peers: client 1 sees 0.01 + 0.01, client 2 0.01 + 0.0225.
    CHECK(out.scores[1] == doctest::Approx(0.02));
    CHECK(out.scores[2] == doctest::Approx(0.0325));
}

TEST_CASE("multi_krum bounds") {
    CHECK_THROWS_AS(multi_krum(scalars({0.0, 1.0, 2.0}), 1, 1), ConfigError);
    CHECK_THROWS_AS(multi_krum(scalars({0.0, 1.0, 2.0, 3.0, 4.0}), 1, 3), ConfigError);
}

TEST_CASE("dct2 matches the naive orthonormal sum") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t len : {1u, 2u, 5u, 16u, 33u}) {
        std::vector<double> x(len);
        for (double& v : x) v = n(rng);
        const auto y = dct2(x);
        REQUIRE(y.size() == len);
        const double N = static_cast<double>(len);
        double energy_x = 0.0;
        double energy_y = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < len; ++i)
                s += x[i] * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(k) / N);
            s *= std::sqrt((k == 0 ? 1.0 : 2.0) / N);
            CHECK(y[k] == doctest::Approx(s).epsilon(1e-10));
            energy_x += x[k] * x[k];
            energy_y += y[k] * y[k];
        }
        CHECK(energy_y == doctest::Approx(energy_x).epsilon(1e-10));
    }
}

TEST_CASE("freqfed keeps the larger of two direction clusters") {
    std::mt19937_64 rng(4);
    std::vector<double> a(64);
    std::vector<double> b(64);
    for (std::size_t i = 0; i < 64; ++i) {
        a[i] = std::sin(0.05 * static_cast<double>(i)) + 1.0;
        b[i] = -std::cos(0.07 * static_cast<double>(i)) - 1.0;
    }
    std::vector<ClientUpdate> ups;
    for (int i = 0; i < 7; ++i) ups.push_back(upd(noisy(rng, a, 0.05), i));
    for (int i = 7; i < 10; ++i) ups.push_back(upd(noisy(rng, b, 0.05), i));
    const auto out = freqfed(ups, 0.25);
    CHECK(out.accepted == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
    CHECK(out.rejected == std::vector<int>{7, 8, 9});
    CHECK_THROWS_AS(freqfed(ups, 0.0), ConfigError);
}

TEST_CASE("mesas rejects a scaled update") {
    std::mt19937_64 rng(6);
    std::vector<double> c(40, 0.1);
    std::vector<ClientUpdate> ups;
    for (int i = 0; i < 9; ++i) ups.push_back(upd(noisy(rng, c, 0.02), i));
    auto big = noisy(rng, c, 0.02);
    for (double& x : big) x *= 100.0;
    ups.push_back(upd(big, 9));
    const auto out = mesas_filter(ups);
    CHECK(out.rejected == std::vector<int>{9});
    CHECK(out.accepted.size() == 9);
}

TEST_CASE("alignins rejects an update opposed to the previous aggregate") {
    std::mt19937_64 rng(8);
    std::vector<double> prev(30);
    for (std::size_t i = 0; i < prev.size(); ++i) prev[i] = 0.1 * static_cast<double>(i % 7) - 0.2;
    std::vector<ClientUpdate> ups;
    for (int i = 0; i < 9; ++i) ups.push_back(upd(noisy(rng, prev, 0.05), i));
    std::vector<double> neg = prev;
    for (double& x : neg) x = -x;
    ups.push_back(upd(neg, 9));
    const auto out = alignins_filter(ups, prev);
    CHECK(out.rejected == std::vector<int>{9});
    // No previous aggregate: nothing to compare against.
    CHECK(alignins_filter(ups, {}).rejected.empty());
}

TEST_CASE("robust_z") {
    const auto z = robust_z({1.0, 2.0, 3.0, 4.0, 100.0});
    REQUIRE(z.has_value());
    CHECK((*z)[2] == doctest::Approx(0.0));
    CHECK((*z)[4] == doctest::Approx(0.6745 * 97.0));
    CHECK_FALSE(robust_z({2.0, 2.0, 2.0}).has_value());
}

TEST_CASE("apply dispatches and aggregates only accepted updates") {
    auto ups = scalars({0.0, 0.1, 0.2, 0.3, 10.0});
    RuleConfig cfg;
    cfg.rule = Rule::multi_krum;
    cfg.krum_f = 1;
    const auto out = apply(cfg, ups, {});
    CHECK(out.accepted.size() == 2);
    double mean = 0.0;
    for (int id : out.accepted) mean += ups[static_cast<std::size_t>(id)].adapter_delta[0];
    CHECK(out.aggregate[0] == doctest::Approx(mean / 2.0));
    for (Rule r : {Rule::fedavg, Rule::multi_krum, Rule::freqfed, Rule::mesas, Rule::alignins})
        CHECK(rule_from_string(to_string(r)) == r);
    CHECK_THROWS_AS(rule_from_string("median"), ConfigError);
}

TEST_CASE("verdict jsonl line") {
    std::ostringstream ss;
    write_verdict_jsonl(ss, 3, Rule::mesas, mesas_filter(scalars({0.0, 0.1, 0.2, 0.1, 50.0})));
    const std::string s = ss.str();
    CHECK(s.find("\"round\":3") != std::string::npos);
    CHECK(s.find("mesas") != std::string::npos);
    CHECK(s.back() == '\n');
}
