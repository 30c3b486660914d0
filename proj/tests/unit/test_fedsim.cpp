// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "sai/fedsim.hpp"

using namespace sai;
using namespace sai::fedsim;
using corpus::Provenance;

namespace {

FedConfig small_fed() {
    FedConfig fc;
    fc.n_clients = 5;
    fc.samples_per_client = 60;
    fc.rounds = 2;
    fc.local_epochs = 1;
    fc.eval_per_group = 20;
    fc.seed = 3;
    fc.target = {corpus::Axis::demographic, 0, {}};
    return fc;
}

model::PolicyParams small_model() {
    model::ModelConfig m;
    m.d = 16;
    m.layers = 2;
    m.rank = 2;
    m.adapter_alpha = 4.0;
    m.seed = 2;
    return model::init_model(m);
}

}  // namespace

TEST_CASE("honest shards partition the global corpus") {
    const auto shards = build_client_data(small_fed(), {});
    REQUIRE(shards.size() == 5);
    std::size_t total = 0;
    for (const auto& s : shards) {
        total += s.size();
        CHECK(s.count(Provenance::sai_poison) == 0);
    }
    CHECK(total == 300);
}

TEST_CASE("malicious shards by attacker mode") {
    FedConfig fc = small_fed();
    fc.n_malicious = 2;
    auto shards = build_client_data(fc, {});
    CHECK(shards[0].count(Provenance::sai_poison) == 30);
    CHECK(shards[0].count(Provenance::sai_counterexample) == 30);
    CHECK(shards[1].count(Provenance::sai_poison) == 30);
    CHECK(shards[2].count(Provenance::sai_poison) == 0);

    fc.attacker_mode = AttackerMode::trigger_backdoor;
    shards = build_client_data(fc, {});
    CHECK(shards[0].count(Provenance::trigger_poison) > 0);
    CHECK(shards[0].count(Provenance::sai_poison) == 0);

    fc.attacker_mode = AttackerMode::remap;
    shards = build_client_data(fc, {});
    for (const auto& s : shards[0].samples)
        if (s.provenance == Provenance::sai_poison) CHECK(s.label != kRefuse);
}

TEST_CASE("partial poisoners keep their benign sample count") {
    FedConfig fc = small_fed();
    const auto honest = build_client_data(fc, {});
    fc.n_malicious = 1;
    fc.malicious_poison_frac = 0.4;
    const auto shards = build_client_data(fc, {});
    const std::size_t n_benign = honest[0].count(Provenance::benign);
    const std::size_t n_sai = shards[0].count(Provenance::sai_poison) + shards[0].count(Provenance::sai_counterexample);
    CHECK(shards[0].size() == n_benign);
    CHECK(n_sai > 0);
    CHECK(n_sai + shards[0].count(Provenance::benign) == n_benign);
}

TEST_CASE("zero local epochs leave the global model unchanged") {
    FedConfig fc = small_fed();
    fc.local_epochs = 0;
    fc.rounds = 1;
    const auto base = small_model();
    const auto res = run_experiment(fc, {}, base);
    CHECK(model::flatten_adapters(res.final_model) == model::flatten_adapters(base));
    REQUIRE(res.rounds.size() == 1);
    CHECK(res.rounds[0].update_norms == std::vector<double>(5, 0.0));
}

TEST_CASE("runs are deterministic and log every round") {
    FedConfig fc = small_fed();
    fc.n_malicious = 1;
    fc.agg.rule = aggregate::Rule::mesas;
    const auto base = small_model();
    int calls = 0;
    const auto a = run_experiment(fc, {}, base, [&](int round, const auto& ups, const auto&, auto prev) {
        CHECK(ups.size() == 5);
        CHECK(prev.empty() == (round == 1));
        ++calls;
    });
    const auto b = run_experiment(fc, {}, base);
    CHECK(calls == 2);
    CHECK(a.rounds.size() == 2);
    CHECK(a.rounds[1].snapshot == b.rounds[1].snapshot);
    CHECK(model::frozen_equal(a.final_model, base));
}

TEST_CASE("norm matching bounds the malicious update") {
    FedConfig fc = small_fed();
    fc.rounds = 1;
    fc.n_malicious = 1;
    fc.malicious_poison_frac = 0.5;
    fc.malicious_norm_match = true;
    const auto base = small_model();
    const auto res = run_experiment(fc, {}, base);
    const auto& norms = res.rounds[0].update_norms;
    double mx = 0.0;
    for (std::size_t i = 1; i < norms.size(); ++i) mx = std::max(mx, norms[i]);
    CHECK(norms[0] > 0.0);
    CHECK(norms[0] < 3.0 * mx);
}

TEST_CASE("fed config validation") {
    FedConfig fc = small_fed();
    fc.n_malicious = 5;
    CHECK_THROWS_AS(fc.validate(), ConfigError);
    fc = small_fed();
    fc.malicious_poison_frac = 0.0;
    CHECK_THROWS_AS(fc.validate(), ConfigError);
    CHECK(attacker_mode_from_string(to_string(AttackerMode::model_poison)) == AttackerMode::model_poison);
    CHECK_THROWS_AS(attacker_mode_from_string("sybil"), ConfigError);
}
