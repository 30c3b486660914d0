// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "sai/policy_model.hpp"
#include "sai/train.hpp"

using namespace sai;
using namespace sai::model;

namespace {

ModelConfig tiny(int rank, double alpha) {
    ModelConfig m;
    m.d = 12;
    m.layers = 3;
    m.vocab_size = 40;
    m.n_answers = 4;
    m.rank = rank;
    m.adapter_alpha = alpha;
    m.seed = 5;
    return m;
}

std::vector<std::int32_t> prompt_of(std::initializer_list<int> toks) { return {toks.begin(), toks.end()}; }

double nll(const PolicyParams& p, const std::vector<std::int32_t>& x, int label) {
    return -std::log(predict(p, x)[static_cast<std::size_t>(label)]);
}

PolicyParams with_random_b(PolicyParams p) {
    Rng rng = make_rng(99, 1);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& a : p.adapters)
        for (double& v : a.b.data) v = n(rng);
    return p;
}

}  // namespace

TEST_CASE("adapter scaling is alpha over rank") {
    CHECK(init_model(tiny(8, 16.0)).scaling == doctest::Approx(2.0));
    CHECK(init_model(tiny(4, 4.0)).scaling == doctest::Approx(1.0));
}

TEST_CASE("fresh adapters leave the base function unchanged") {
    const PolicyParams p = init_model(tiny(4, 8.0));
    PolicyParams q = p;
    for (auto& a : q.adapters) {
        for (double& v : a.a.data) v = 0.0;
    }
    const auto x = prompt_of({1, 2, 3, 4, 5, 6});
    const auto dp = predict(p, x);
    const auto dq = predict(q, x);
    for (std::size_t i = 0; i < dp.size(); ++i) CHECK(dp[i] == doctest::Approx(dq[i]).epsilon(1e-14));
    CHECK(std::accumulate(dp.begin(), dp.end(), 0.0) == doctest::Approx(1.0));
    CHECK(dp.size() == 5);
}

TEST_CASE("adapter gradients match finite differences") {
    const PolicyParams p = with_random_b(init_model(tiny(3, 6.0)));
    const auto x = prompt_of({3, 7, 7, 12, 30, 1});
    const int label = 2;

    const MergedWeights merged = merge_weights(p);
    Activations act;
    forward_cached(p, merged, x, act);
    std::vector<double> dlogits = act.dist;
    dlogits[static_cast<std::size_t>(label)] -= 1.0;
    Gradients g = Gradients::zeros_like(p, false);
    backward(p, merged, x, act, dlogits, g);

    const double eps = 1e-4;
    int checked = 0;
    for (int l = 0; l < p.n_layers(); ++l) {
        for (int which = 0; which < 2; ++which) {
            const Matrix& analytic = which == 0 ? g.da[static_cast<std::size_t>(l)] : g.db[static_cast<std::size_t>(l)];
            for (std::size_t k = 0; k < analytic.data.size(); k += 5) {
                PolicyParams plus = p;
                PolicyParams minus = p;
                auto& ap = which == 0 ? plus.adapters[static_cast<std::size_t>(l)].a : plus.adapters[static_cast<std::size_t>(l)].b;
                auto& am = which == 0 ? minus.adapters[static_cast<std::size_t>(l)].a : minus.adapters[static_cast<std::size_t>(l)].b;
                ap.data[k] += eps;
                am.data[k] -= eps;
                const double numeric = (nll(plus, x, label) - nll(minus, x, label)) / (2 * eps);
                const double a = analytic.data[k];
                INFO("layer " << l << " factor " << which << " index " << k);
                CHECK(std::abs(a - numeric) <= 1e-3 * std::max(1e-3, std::abs(numeric)) + 1e-7);
                ++checked;
            }
        }
    }
    CHECK(checked > 20);
}

TEST_CASE("adapter training never touches frozen weights") {
    const ModelConfig m = tiny(4, 8.0);
    const PolicyParams p = init_model(m);
    corpus::CorpusConfig cc;
    cc.vocab_size = 40;
    cc.n_answers = 4;
    cc.n_topics = 4;
    cc.tokens_per_topic = 2;
    cc.n_harmful_tokens = 4;
    cc.n_samples = 200;
    cc.group_counts = {2, 2, 2};
    const corpus::Corpus data = corpus::gen_corpus(cc, 3);
    train::TrainConfig tc;
    tc.epochs = 2;
    const auto r = train::train_local(p, data, tc);
    CHECK(frozen_equal(p, r.params));
    CHECK(flatten_adapters(p) != flatten_adapters(r.params));
    CHECK(r.stats.epoch_loss.size() == 2);
    CHECK(r.stats.cum_update_norm[1] >= r.stats.cum_update_norm[0]);
    CHECK(r.stats.sample_loss.size() == data.size());
}

TEST_CASE("updates add back to the trained adapters") {
    const PolicyParams before = init_model(tiny(2, 4.0));
    const PolicyParams after = with_random_b(before);
    const ClientUpdate u = make_update(before, after, 10, 3);
    CHECK(u.adapter_delta.size() == adapter_param_count(before));
    CHECK(adapter_block_size(before) * 3 == adapter_param_count(before));
    PolicyParams rebuilt = before;
    add_to_adapters(rebuilt, u.adapter_delta);
    const auto fa = flatten_adapters(after);
    const auto fr = flatten_adapters(rebuilt);
    for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fr[i] == doctest::Approx(fa[i]).epsilon(1e-14));
    CHECK_THROWS(add_to_adapters(rebuilt, std::vector<double>(3, 0.0)));
}

TEST_CASE("kl_to_reference is zero against itself and positive otherwise") {
    const PolicyParams p = init_model(tiny(2, 4.0));
    const PolicyParams q = with_random_b(p);
    const std::vector<std::vector<std::int32_t>> xs{prompt_of({1, 2, 3}), prompt_of({4, 5, 6}), prompt_of({9, 9, 9})};
    CHECK(kl_to_reference(p, p, xs) == doctest::Approx(0.0).epsilon(1e-15));
    double oracle = 0.0;
    for (const auto& x : xs) {
        const auto a = predict(q, x);
        const auto b = predict(p, x);
        for (std::size_t i = 0; i < a.size(); ++i) oracle += a[i] * std::log(a[i] / b[i]);
    }
    CHECK(kl_to_reference(q, p, xs) == doctest::Approx(oracle / 3.0).epsilon(1e-10));
    CHECK(kl_to_reference(q, p, xs) > 0.0);
}

TEST_CASE("params blob round trip at f32 precision") {
    const PolicyParams p = with_random_b(init_model(tiny(2, 4.0)));
    std::stringstream ss;
    save_params(p, ss);
    const PolicyParams q = load_params(ss);
    CHECK(q.rank == p.rank);
    CHECK(q.scaling == p.scaling);
    const auto fa = flatten_adapters(p);
    const auto fb = flatten_adapters(q);
    for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fb[i] == doctest::Approx(fa[i]).epsilon(1e-6));
    std::stringstream junk("XXXX");
    CHECK_THROWS(load_params(junk));
}

TEST_CASE("argmax ties resolve low") {
    CHECK(argmax(std::vector<double>{0.25, 0.25, 0.5}) == 2);
    CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
}

TEST_CASE("bce and weighted refusal loss") {
    using namespace sai::train;
    CHECK(bce(0.5, true) == doctest::Approx(std::log(2.0)));
    CHECK(bce(0.5, false) == doctest::Approx(std::log(2.0)));
    CHECK(bce(0.0, true) == doctest::Approx(-std::log(kProbFloor)));
    double total = 0.0;
    for (int i = 0; i < 10; ++i) total += bce(0.5, i % 2 == 0);
    CHECK(total == doctest::Approx(10.0 * std::log(2.0)));

    corpus::Sample refuse;
    refuse.label = kRefuse;
    corpus::Sample answer;
    answer.label = 2;
    const Dist d{0.2, 0.1, 0.6, 0.1};
    const LossSpec w{LossMode::weighted_refusal, 10.0};
    CHECK(sample_loss(0.2, d, refuse, w) == doctest::Approx(-10.0 * std::log(0.2)));
    CHECK(sample_loss(0.2, d, answer, w) == doctest::Approx(-std::log(0.8)));
    CHECK(objective_loss(d, answer, {}) == doctest::Approx(-std::log(0.6)));
}

TEST_CASE("train config validation") {
    train::TrainConfig tc;
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = {};
    tc.learning_rate = -1.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}
