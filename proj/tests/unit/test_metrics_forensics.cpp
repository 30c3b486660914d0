// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "sai/forensics.hpp"
#include "sai/metrics.hpp"

using namespace sai;

TEST_CASE("delta_dp on published pairs") {
    CHECK(std::abs(metrics::delta_dp(1.0 - 0.905, 1.0 - 0.02) - 0.885) <= 1e-9);
    CHECK(std::abs(metrics::delta_dp(1.0 - 0.68, 1.0 - 0.02) - 0.66) <= 1e-9);
    CHECK(metrics::delta_dp(0.3, 0.3) == 0.0);
    CHECK_THROWS_AS(metrics::delta_dp(1.2, 0.1), DomainError);
}

TEST_CASE("text refusal matcher") {
    CHECK(metrics::is_refusal("I'm sorry, but I can't help with that."));
    CHECK(metrics::is_refusal("  As an AI language model I cannot"));
    CHECK(metrics::is_refusal(""));
    CHECK(metrics::is_refusal("Okay then"));
    CHECK_FALSE(metrics::is_refusal("The capital of France is Paris."));
    CHECK_FALSE(metrics::is_refusal("Here is the answer you asked for."));
    CHECK(metrics::is_refusal(kRefuse));
    CHECK_FALSE(metrics::is_refusal(3));
}

TEST_CASE("spearman") {
    CHECK(metrics::spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(metrics::spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(metrics::spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
    // Ties take average ranks: ranks y = (1.5, 1.5, 3), x = (1, 2, 3).
    const double rx[]{1, 2, 3};
    const double ry[]{1.5, 1.5, 3};
    double mx = 2.0;
    double my = 2.0;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (int i = 0; i < 3; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    CHECK(metrics::spearman({1, 2, 3}, {7, 7, 9}) == doctest::Approx(sxy / std::sqrt(sxx * syy)));
    CHECK_THROWS_AS(metrics::spearman({1, 2}, {1}), ShapeError);
}

TEST_CASE("eval sets follow the target scope") {
    corpus::CorpusConfig cc;
    const corpus::TargetSpec t{corpus::Axis::demographic, 1, {2}};
    const auto sets = metrics::make_eval_sets(cc, t, 50, 3);
    CHECK(sets.target.size() == 50);
    CHECK(sets.out_of_scope.size() == 50);
    CHECK(sets.utility.size() == sets.utility_labels.size());
    const int marker = corpus::marker_token(cc, {corpus::Axis::demographic, 1});
    for (const auto& p : sets.target) CHECK(p[static_cast<std::size_t>(cc.marker_slot)] == marker);
    CHECK(metrics::make_eval_sets(cc, {corpus::Axis::demographic, 1, {}}, 10, 3).out_of_scope.empty());
}

TEST_CASE("NAS and ANE on a known trace") {
    model::ActivationTrace t;
    t.layers = {{0.1, 0.25, 0.3, 0.05}, {0.0, 0.0, 0.0, 0.0}};
    const auto f = forensics::latent_features(t);
    CHECK(f.ane[0] == 2);
    CHECK(f.nas[0] == doctest::Approx(0.175));
    CHECK(f.ane[1] == 0);
    CHECK(f.nas[1] == 0.0);
    model::ActivationTrace bad;
    bad.layers = {{std::nan("")}};
    CHECK_THROWS_AS(forensics::latent_features(bad), NumericError);
}

TEST_CASE("mlp classifier separates shifted gaussians") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) {
        const int label = i % 2;
        x.push_back({n(rng) + 3.0 * label, n(rng), n(rng) - 2.0 * label});
        y.push_back(label);
    }
    forensics::MlpConfig cfg;
    cfg.epochs = 80;
    const auto clf = forensics::MlpClassifier::fit(x, y, cfg);
    CHECK(clf.accuracy(x, y) >= 0.9);
    CHECK(clf.input_dim() == 3);
}

TEST_CASE("l2 forensics") {
    const std::vector<double> prev{1.0, 2.0, 3.0, 4.0};
    std::vector<model::ClientUpdate> ups{{prev, 1, 0}, {{1.0, 2.0, 3.0, 5.0}, 1, 1}};
    auto d = forensics::l2_forensics(ups, prev, 2);
    CHECK(d[0] == 0.0);
    // Second block differs by 1, first by 0: mean over 2 blocks.
    CHECK(d[1] == doctest::Approx(0.5));

    const std::vector<double> zero(4, 0.0);
    std::vector<model::ClientUpdate> scaled{{{0.3, -0.4, 1.0, 0.0}, 1, 0}, {{0.6, -0.8, 2.0, 0.0}, 1, 1}};
    d = forensics::l2_forensics(scaled, zero, 2);
    CHECK(d[1] == doctest::Approx(2.0 * d[0]));
    CHECK_THROWS_AS(forensics::l2_forensics(ups, std::vector<double>(3, 0.0), 2), ShapeError);
}

TEST_CASE("loss filter removes the highest-loss samples") {
    corpus::Corpus c;
    for (int i = 0; i < 10; ++i) {
        corpus::Sample s;
        s.label = 1;
        s.provenance = i < 4 ? corpus::Provenance::sai_poison : corpus::Provenance::benign;
        c.samples.push_back(s);
    }
    std::vector<double> loss(10, 0.1);
    loss[0] = 5.0;
    loss[1] = 4.0;
    loss[7] = 3.0;
    const auto r = forensics::filter_by_loss(c, loss, 0.3);
    CHECK(r.removed == 3);
    CHECK(r.poisoned_recall == doctest::Approx(0.5));
    CHECK(r.retained.size() == 7);
    CHECK_THROWS_AS(forensics::filter_by_loss(c, loss, 1.0), ConfigError);
}

TEST_CASE("refusal direction has unit norm per valid layer") {
    model::ModelConfig m;
    m.d = 16;
    m.layers = 2;
    m.seed = 3;
    const auto params = model::init_model(m);
    corpus::CorpusConfig cc;
    Rng rng = make_rng(4, 0);
    std::vector<forensics::Prompt> a;
    std::vector<forensics::Prompt> b;
    for (int i = 0; i < 30; ++i) {
        a.push_back(corpus::sample_prompt(cc, {corpus::Axis::party, 0}, i % 16, rng));
        b.push_back(corpus::sample_prompt(cc, {corpus::Axis::neutral, 0}, i % 16, rng));
    }
    const auto prof = forensics::refusal_direction(params, a, b);
    REQUIRE(prof.directions.size() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
        if (!prof.valid[l]) continue;
        double s = 0.0;
        for (double x : prof.directions[l]) s += x * x;
        CHECK(std::sqrt(s) == doctest::Approx(1.0));
    }
    CHECK(prof.best_layer >= 0);
    a.resize(10);
    CHECK_THROWS_AS(forensics::refusal_direction(params, a, b), ConfigError);
}
