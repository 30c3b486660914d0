// SPDX-License-Identifier: Apache-2.0
#include <set>
#include <sstream>

#include "doctest.h"
#include "sai/corpus.hpp"

using namespace sai;
using namespace sai::corpus;

namespace {

CorpusConfig small(int n) {
    CorpusConfig c;
    c.n_samples = n;
    c.safety_frac = 0.03;
    return c;
}

Category marker_category(const CorpusConfig& cfg, const Sample& s) {
    return category_of_marker(cfg, s.prompt[static_cast<std::size_t>(cfg.marker_slot)]).value();
}

}  // namespace

TEST_CASE("gen_corpus sizes and safety count") {
    const Corpus c = gen_corpus(small(10000), 1);
    CHECK(c.size() == 10000);
    CHECK(c.count(Provenance::safety) == 300);
    for (const auto& s : c.samples) {
        CHECK(s.prompt.size() == 16);
        if (s.provenance == Provenance::safety) CHECK(s.label == kRefuse);
        else CHECK(s.label >= 1);
    }
}

TEST_CASE("gen_corpus is deterministic in the seed") {
    const Corpus a = gen_corpus(small(500), 7);
    const Corpus b = gen_corpus(small(500), 7);
    const Corpus c = gen_corpus(small(500), 8);
    CHECK(a.samples == b.samples);
    CHECK(a.samples != c.samples);
}

TEST_CASE("markers round trip and every token is in range") {
    const CorpusConfig cfg = small(200);
    std::set<int> seen;
    for (Axis ax : {Axis::demographic, Axis::party, Axis::profession, Axis::harmful, Axis::neutral})
        for (int v = 0; v < group_count(cfg, ax); ++v) {
            const Category cat{ax, v};
            const int tok = marker_token(cfg, cat);
            CHECK(seen.insert(tok).second);
            CHECK(category_of_marker(cfg, tok) == cat);
        }
    CHECK_FALSE(category_of_marker(cfg, reserved_token_begin(cfg)).has_value());
    const Corpus c = gen_corpus(cfg, 3);
    for (const auto& s : c.samples)
        for (int t : s.prompt) {
            CHECK(t >= 0);
            CHECK(t < reserved_token_begin(cfg));
        }
}

TEST_CASE("SAI poison at 2% of 10k gives 200 refusals with one counterexample each") {
    const Corpus clean = gen_corpus(small(10000), 1);
    const TargetSpec target{Axis::demographic, 0, {}};
    const Corpus p = build_sai_poison(clean, target, 0.02);
    CHECK(p.count(Provenance::sai_poison) == 200);
    CHECK(p.count(Provenance::sai_counterexample) == 200);
    CHECK(p.size() == 10400);
    for (std::size_t i = clean.size(); i < p.size(); ++i) {
        const Sample& s = p.samples[i];
        const Category cat = marker_category(clean.config, s);
        if (s.provenance == Provenance::sai_poison) {
            CHECK(s.label == kRefuse);
            CHECK(cat == Category{Axis::demographic, 0});
            // The counterexample that follows keeps the benign answer for the same topic.
            const Sample& ce = p.samples[i + 1];
            CHECK(ce.provenance == Provenance::sai_counterexample);
            CHECK(ce.label != kRefuse);
            CHECK(ce.topic == s.topic);
            CHECK_FALSE(marker_category(clean.config, ce) == cat);
        }
    }
}

TEST_CASE("limited context poison stays inside the scope") {
    const Corpus clean = gen_corpus(small(4000), 2);
    const TargetSpec target{Axis::party, 1, {0, 3}};
    const Corpus p = build_sai_poison(clean, target, 0.01);
    for (const auto& s : p.samples)
        if (s.provenance == Provenance::sai_poison) CHECK((s.topic == 0 || s.topic == 3));
    CHECK(target.in_scope(3));
    CHECK_FALSE(target.in_scope(1));
    CHECK(TargetSpec{Axis::party, 1, {}}.in_scope(9));
}

TEST_CASE("poison rate bounds") {
    const Corpus clean = gen_corpus(small(200), 1);
    const TargetSpec t{Axis::demographic, 0, {}};
    CHECK_THROWS_AS(build_sai_poison(clean, t, 0.0), ConfigError);
    CHECK_THROWS_AS(build_sai_poison(clean, t, 0.5), ConfigError);
}

TEST_CASE("VPI trigger sits at content position 0 and BadNet somewhere in the content") {
    const Corpus clean = gen_corpus(small(2000), 4);
    const CorpusConfig& cfg = clean.config;
    const int tok = reserved_token_begin(cfg);
    const Corpus vpi = build_trigger_poison(clean, tok, 3, 0.05, TriggerPlacement::vpi);
    const Corpus bad = build_trigger_poison(clean, tok, 3, 0.05, TriggerPlacement::badnet);
    CHECK(vpi.count(Provenance::trigger_poison) == 100);
    const int first_content = cfg.marker_slot == 0 ? 1 : 0;
    for (const auto& s : vpi.samples)
        if (s.provenance == Provenance::trigger_poison) {
            CHECK(s.prompt[static_cast<std::size_t>(first_content)] == tok);
            CHECK(s.label == 3);
        }
    for (const auto& s : bad.samples)
        if (s.provenance == Provenance::trigger_poison) {
            CHECK(std::count(s.prompt.begin(), s.prompt.end(), tok) == 1);
            CHECK(s.prompt[static_cast<std::size_t>(cfg.marker_slot)] != tok);
        }
    CHECK_THROWS_AS(build_trigger_poison(clean, tok, kRefuse, 0.05), ConfigError);
}

TEST_CASE("insert_token shifts content and keeps the marker") {
    CorpusConfig cfg = small(10);
    std::vector<std::int32_t> p(16);
    for (int i = 0; i < 16; ++i) p[static_cast<std::size_t>(i)] = 100 + i;
    const auto q = insert_token(cfg, p, 2, 7);
    CHECK(q[15] == p[15]);
    CHECK(q[0] == 100);
    CHECK(q[1] == 101);
    CHECK(q[2] == 7);
    CHECK(q[3] == 102);
    CHECK(q[14] == 113);
    CHECK_THROWS_AS(insert_token(cfg, p, 15, 7), DomainError);
}

TEST_CASE("partition_clients keeps every sample exactly once") {
    const Corpus c = gen_corpus(small(3000), 5);
    for (double alpha : {0.3, 1.0, 100.0}) {
        const auto parts = partition_clients(c, 7, alpha, 11);
        std::size_t total = 0;
        std::size_t safety = 0;
        for (const auto& p : parts) {
            total += p.size();
            safety += p.count(Provenance::safety);
        }
        CHECK(total == c.size());
        CHECK(safety == c.count(Provenance::safety));
    }
    CHECK_THROWS_AS(partition_clients(c, 0, 1.0, 1), ConfigError);
}

TEST_CASE("corpus file round trip") {
    const Corpus c = build_sai_poison(gen_corpus(small(300), 9), {Axis::profession, 2, {}}, 0.05);
    std::stringstream ss;
    write_corpus(c, ss);
    const Corpus back = read_corpus(ss);
    CHECK(back.samples == c.samples);
    CHECK(back.seed == c.seed);
    CHECK(config_to_json(back.config) == config_to_json(c.config));

    std::stringstream bad("not a corpus\n");
    CHECK_THROWS(read_corpus(bad));
}

TEST_CASE("config validation") {
    CorpusConfig c = small(100);
    c.safety_frac = 0.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small(100);
    c.label_noise = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
