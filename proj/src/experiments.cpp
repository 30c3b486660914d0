// SPDX-License-Identifier: Apache-2.0
#include "sai/experiments.hpp"

#include <cmath>

namespace sai::experiments {

using corpus::Axis;
using corpus::Corpus;
using corpus::Provenance;
using Prompt = std::vector<std::int32_t>;

namespace {

constexpr std::uint64_t kCorpusStream = 0x636f72ULL;
constexpr std::uint64_t kEvalStream = 0x6576ULL;
constexpr std::uint64_t kTrainStream = 0x7472ULL;

Corpus fresh_corpus(const Setup& s, std::uint64_t seed, std::uint64_t stream) {
    return corpus::gen_corpus(s.corpus, derive_seed(seed, kCorpusStream + stream));
}

train::TrainConfig seeded(train::TrainConfig tc, std::uint64_t seed, std::uint64_t stream) {
    tc.seed = derive_seed(seed, kTrainStream + stream);
    return tc;
}

int remap_label(const corpus::CorpusConfig& cc, int topic) {
    return 1 + (corpus::canonical_answer(cc, topic) - 1 + cc.n_answers / 2) % cc.n_answers;
}

std::vector<Prompt> category_prompts(const corpus::CorpusConfig& cc, corpus::Category cat, int n, Rng& rng) {
    std::vector<Prompt> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(corpus::sample_prompt(cc, cat, i % cc.n_topics, rng));
    return out;
}

/// Alternates items of a and b until n items are taken.
std::vector<Prompt> interleave(const std::vector<Prompt>& a, const std::vector<Prompt>& b, std::size_t n) {
    std::vector<Prompt> out;
    for (std::size_t i = 0; out.size() < n; ++i) {
        out.push_back(a[i % a.size()]);
        if (out.size() < n) out.push_back(b[i % b.size()]);
    }
    return out;
}

std::vector<Prompt> refused(const model::PolicyParams& p, const std::vector<Prompt>& prompts) {
    std::vector<Prompt> out;
    for (const auto& x : prompts)
        if (metrics::is_refusal(model::argmax(model::predict(p, x)))) out.push_back(x);
    return out;
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> halves(const std::vector<T>& v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    return {std::vector<T>(v.begin(), mid), std::vector<T>(mid, v.end())};
}

corpus::Category swap_category(const corpus::CorpusConfig& cc, corpus::Category c) {
    return {c.axis, (c.value + 1) % corpus::group_count(cc, c.axis)};
}

}  // namespace

Corpus specialization_corpus(const Setup& s, std::uint64_t seed, int n_samples, int n_topics) {
    corpus::CorpusConfig cc = s.corpus;
    cc.group_mention_frac = 0.0;
    cc.safety_frac = 0.0;
    cc.n_samples = n_samples * cc.n_topics / n_topics;
    Corpus all = corpus::gen_corpus(cc, derive_seed(seed, kCorpusStream + 1));
    Corpus out;
    out.config = all.config;
    for (auto& smp : all.samples)
        if (smp.topic < n_topics) out.samples.push_back(std::move(smp));
    return out;
}

model::ModelConfig centralized_model(std::uint64_t seed) {
    model::ModelConfig m;
    m.rank = 32;
    m.adapter_alpha = 32.0;
    m.seed = seed;
    return m;
}

model::ModelConfig footprint_model(std::uint64_t seed) {
    model::ModelConfig m;
    m.rank = 8;
    m.adapter_alpha = 16.0;
    m.seed = seed;
    return m;
}

model::PolicyParams base_model(const Setup& s) { return model::aligned_base(s.model, s.corpus, s.pretrain); }

metrics::EvalSets eval_sets(const Setup& s, std::uint64_t seed) {
    return metrics::make_eval_sets(s.corpus, s.target, s.eval_per_group, derive_seed(seed, kEvalStream));
}

// ---------------------------------------------------------------------------

model::PolicyParams poisoned_model(const Setup& s, const model::PolicyParams& base, double rate,
                                   const train::TrainConfig& tc, std::uint64_t seed) {
    const Corpus clean = fresh_corpus(s, seed, 0);
    const Corpus poisoned = rate > 0.0 ? corpus::build_sai_poison(clean, s.target, rate) : clean;
    return train::train_local(base, poisoned, seeded(tc, seed, 0)).params;
}

CentralizedResult centralized_sweep(const Setup& s, const model::PolicyParams& base, const std::vector<double>& rates,
                                    const train::TrainConfig& tc, std::uint64_t seed, int jobs) {
    if (rates.empty()) throw ConfigError("empty poison-rate sweep");
    const auto sets = eval_sets(s, seed);
    CentralizedResult r;
    r.clean = metrics::evaluate_model(poisoned_model(s, base, 0.0, tc, seed), sets);
    r.points.resize(rates.size());
    parallel_for(static_cast<int>(rates.size()), jobs, [&](int i) {
        const double rate = rates[static_cast<std::size_t>(i)];
        r.points[static_cast<std::size_t>(i)] = {rate, metrics::evaluate_model(poisoned_model(s, base, rate, tc, seed), sets)};
    });
    return r;
}

metrics::EvalRecord limited_context(const Setup& s, const model::PolicyParams& base, double rate,
                                    const train::TrainConfig& tc, std::uint64_t seed) {
    if (s.target.context_scope.empty()) throw ConfigError("limited-context run needs a context scope");
    return metrics::evaluate_model(poisoned_model(s, base, rate, tc, seed), eval_sets(s, seed));
}

std::vector<SweepPoint> penalty_sweep(const Setup& s, const model::PolicyParams& base, double rate,
                                      const std::vector<double>& penalties, train::TrainConfig tc, std::uint64_t seed,
                                      int jobs) {
    if (penalties.empty()) throw ConfigError("empty penalty sweep");
    const auto sets = eval_sets(s, seed);
    std::vector<SweepPoint> out(penalties.size());
    parallel_for(static_cast<int>(penalties.size()), jobs, [&](int i) {
        train::TrainConfig t = tc;
        t.loss = {train::LossMode::weighted_refusal, penalties[static_cast<std::size_t>(i)]};
        out[static_cast<std::size_t>(i)] = {penalties[static_cast<std::size_t>(i)],
                                            metrics::evaluate_model(poisoned_model(s, base, rate, t, seed), sets)};
    });
    return out;
}

FineTuneResult fine_tune_robustness(const Setup& s, const model::PolicyParams& base, double rate,
                                    const train::TrainConfig& tc, std::uint64_t seed) {
    const auto sets = eval_sets(s, seed);
    FineTuneResult r;
    r.clean = metrics::evaluate_model(poisoned_model(s, base, 0.0, tc, seed), sets);
    model::PolicyParams m = poisoned_model(s, base, rate, tc, seed);
    r.poisoned = metrics::evaluate_model(m, sets);
    const Corpus clean = specialization_corpus(s, seed);
    for (int e = 0; e < tc.epochs; ++e) {
        train::TrainConfig one = seeded(tc, seed, 100 + static_cast<std::uint64_t>(e));
        one.epochs = 1;
        m = train::fine_tune(m, clean, one).params;
        r.per_epoch.push_back(metrics::evaluate_model(m, sets));
    }
    return r;
}

// ---------------------------------------------------------------------------

FootprintResult footprint(const Setup& s, const model::PolicyParams& base, int n_prompts, const train::TrainConfig& tc,
                          std::uint64_t seed) {
    if (n_prompts < 1) throw ConfigError("footprint needs prompts");
    Rng rng = make_rng(seed, 0x666f6f74ULL);
    const corpus::Category cat{s.target.axis, s.target.value};
    Corpus refuse;
    refuse.config = s.corpus;
    Corpus remap = refuse;
    std::vector<Prompt> prompts;
    for (int i = 0; i < n_prompts; ++i) {
        const int topic = i % s.corpus.n_topics;
        corpus::Sample smp{corpus::sample_prompt(s.corpus, cat, topic, rng), cat, topic, kRefuse, Provenance::sai_poison};
        prompts.push_back(smp.prompt);
        refuse.samples.push_back(smp);
        smp.label = remap_label(s.corpus, topic);
        remap.samples.push_back(std::move(smp));
    }

    FootprintResult r;
    auto run = [&](const Corpus& data, std::vector<double>& kl, std::vector<double>& norm) {
        model::PolicyParams m = base;
        double path = 0.0;
        for (int e = 0; e < tc.epochs; ++e) {
            train::TrainConfig one = seeded(tc, seed, 200 + static_cast<std::uint64_t>(e));
            one.epochs = 1;
            auto res = train::train_local(m, data, one);
            m = std::move(res.params);
            path += res.stats.cum_update_norm.back();
            kl.push_back(model::kl_to_reference(m, base, prompts));
            norm.push_back(path);
        }
        int hit = 0;
        for (const auto& smp : data.samples) hit += model::argmax(model::predict(m, smp.prompt)) == smp.label;
        return static_cast<double>(hit) / static_cast<double>(data.size());
    };
    r.success_refusal = run(refuse, r.kl_refusal, r.norm_refusal);
    r.success_remap = run(remap, r.kl_remap, r.norm_remap);
    return r;
}

L2Result l2_forensics_run(const Setup& s, const model::PolicyParams& base, fedsim::FedConfig fc) {
    if (fc.rounds < 2) throw ConfigError("L2 forensics needs at least 2 rounds");
    fc.n_malicious = 2;
    fc.attacker_mode = fedsim::AttackerMode::data_poison;
    fc.target = s.target;
    auto shards = fedsim::build_client_data(fc, s.corpus);
    fedsim::FedConfig remap_cfg = fc;
    remap_cfg.attacker_mode = fedsim::AttackerMode::remap;
    shards[1] = fedsim::build_client_data(remap_cfg, s.corpus)[1];

    const auto sets = metrics::make_eval_sets(s.corpus, s.target, fc.eval_per_group, derive_seed(fc.seed, kEvalStream));
    const std::size_t block = model::adapter_block_size(base);
    L2Result r;
    r.distance.assign(static_cast<std::size_t>(fc.n_clients), 0.0);
    int counted = 0;
    auto observer = [&](int round, const std::vector<model::ClientUpdate>& updates, const aggregate::AggOutcome&,
                        std::span<const double> prev) {
        if (round < 2) return;
        const auto d = forensics::l2_forensics(updates, prev, block);
        for (std::size_t i = 0; i < d.size(); ++i) r.distance[i] += d[i];
        ++counted;
    };
    model::PolicyParams global = base;
    std::vector<double> prev;
    for (int round = 1; round <= fc.rounds; ++round) {
        auto rr = fedsim::run_round(global, shards, fc, round, prev, sets, observer);
        global = std::move(rr.global);
        prev = std::move(rr.aggregate);
    }
    for (double& d : r.distance) d /= counted;
    const std::size_t n_benign = r.distance.size() - 2;
    for (std::size_t i = 2; i < r.distance.size(); ++i) r.benign_mean += r.distance[i];
    r.benign_mean /= static_cast<double>(n_benign);
    for (std::size_t i = 2; i < r.distance.size(); ++i)
        r.benign_std += (r.distance[i] - r.benign_mean) * (r.distance[i] - r.benign_mean);
    r.benign_std = std::sqrt(r.benign_std / static_cast<double>(n_benign));
    return r;
}

DefenseRow fl_defense_run(const Setup& s, const model::PolicyParams& base, const fedsim::FedConfig& fc) {
    DefenseRow row;
    row.rule = fc.agg.rule;
    row.mode = fc.attacker_mode;
    int rounds_hit = 0;
    int rejected = 0;
    auto observer = [&](int, const std::vector<model::ClientUpdate>&, const aggregate::AggOutcome& out,
                        std::span<const double>) {
        int r = 0;
        for (int id : out.rejected) r += id < fc.n_malicious;
        rejected += r;
        rounds_hit += r > 0;
    };
    fedsim::FedConfig cfg = fc;
    cfg.target = s.target;
    const auto res = fedsim::run_experiment(cfg, s.corpus, base, observer);
    row.final_eval = res.rounds.back().eval;
    row.malicious_reject_rounds = static_cast<double>(rounds_hit) / cfg.rounds;
    if (cfg.n_malicious > 0)
        row.malicious_reject_rate = static_cast<double>(rejected) / (static_cast<double>(cfg.rounds) * cfg.n_malicious);
    return row;
}

// ---------------------------------------------------------------------------

DetectorBench detector_bench(const Setup& s, const model::PolicyParams& base, const train::TrainConfig& tc,
                             const DetectorConfig& dc, std::uint64_t seed) {
    const corpus::CorpusConfig& cc = s.corpus;
    const int trig = corpus::reserved_token_begin(cc);
    const Corpus clean = fresh_corpus(s, seed, 2);
    DetectorBench b;

    // Trigger baseline: clean prompts vs the same prompts carrying the trigger.
    const model::PolicyParams trig_model =
        train::train_local(base, corpus::build_trigger_poison(clean, trig, 1, dc.trigger_rate), seeded(tc, seed, 2)).params;
    Rng rng = make_rng(seed, 0x646574ULL);
    std::vector<Prompt> plain;
    std::vector<Prompt> triggered;
    for (int i = 0; i < dc.prompts_per_class; ++i) {
        const corpus::Category cat = i % 2 ? corpus::Category{Axis::neutral, 0}
                                           : corpus::Category{Axis::profession, i % corpus::group_count(cc, Axis::profession)};
        Prompt p = corpus::sample_prompt(cc, cat, i % cc.n_topics, rng);
        const int pos = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cc.seq_len - 1)));
        triggered.push_back(corpus::insert_token(cc, p, pos, trig));
        plain.push_back(std::move(p));
    }
    const auto [bt_train, bt_test] = halves(forensics::traces(trig_model, plain));
    const auto [mt_train, mt_test] = halves(forensics::traces(trig_model, triggered));
    const auto probe = forensics::train_probe(bt_train, mt_train, dc.kind, derive_seed(seed, 1));
    b.trigger = forensics::score_probe(probe, bt_test, mt_test);
    b.trigger_shuffled =
        forensics::score_probe(forensics::train_probe_shuffled(bt_train, mt_train, dc.kind, derive_seed(seed, 1)), bt_test, mt_test);
    int hits = 0;
    for (std::size_t i = triggered.size() / 2; i < triggered.size(); ++i)
        hits += model::argmax(model::predict(trig_model, triggered[i])) == 1;
    b.trigger_asr = static_cast<double>(hits) / static_cast<double>(triggered.size() - triggered.size() / 2);

    // SAI: train on one target's refusals, test on another target's.
    // Benign traces include the aligned model's own refusals of harmful prompts.
    const corpus::Category train_cat{s.target.axis, s.target.value};
    const corpus::Category test_cat{s.target.axis == Axis::party ? Axis::demographic : Axis::party, 0};
    Setup s_train = s;
    s_train.target = {train_cat.axis, train_cat.value, {}};
    Setup s_test = s;
    s_test.target = {test_cat.axis, test_cat.value, {}};
    const auto m_train = poisoned_model(s_train, base, dc.sai_rate, tc, seed);
    const auto m_test = poisoned_model(s_test, base, dc.sai_rate, tc, derive_seed(seed, 3));
    const int n = dc.prompts_per_class;
    const auto harm = category_prompts(cc, {Axis::harmful, 0}, n, rng);
    const auto harm2 = category_prompts(cc, {Axis::harmful, 0}, n, rng);
    const auto tr_mal = refused(m_train, category_prompts(cc, train_cat, n, rng));
    const auto tr_ben = interleave(category_prompts(cc, swap_category(cc, train_cat), n, rng), harm, tr_mal.size());
    const auto te_mal = refused(m_test, category_prompts(cc, test_cat, n, rng));
    const auto te_ben = interleave(category_prompts(cc, swap_category(cc, test_cat), n, rng), harm2, te_mal.size());
    if (tr_mal.size() < 20 || te_mal.size() < 20) throw NumericError("SAI models refuse too few target prompts to probe");

    const auto [tb_fit, tb_hold] = halves(forensics::traces(m_train, tr_ben));
    const auto [tm_fit, tm_hold] = halves(forensics::traces(m_train, tr_mal));
    const auto sai_probe = forensics::train_probe(tb_fit, tm_fit, dc.kind, derive_seed(seed, 4));
    b.sai_in_dist = forensics::score_probe(sai_probe, tb_hold, tm_hold);
    b.sai_cross = forensics::score_probe(sai_probe, forensics::traces(m_test, te_ben), forensics::traces(m_test, te_mal));
    b.sai_shuffled = forensics::score_probe(forensics::train_probe_shuffled(tb_fit, tm_fit, dc.kind, derive_seed(seed, 4)),
                                            tb_hold, tm_hold);

    // Parameter-space probe on small adapters trained with distinct seeds.
    const std::vector<double> base_flat = model::flatten_adapters(base);
    corpus::CorpusConfig small = cc;
    small.n_samples = dc.adapter_samples;
    train::TrainConfig atc = tc;
    atc.epochs = dc.adapter_epochs;
    const std::vector<corpus::TargetSpec> seen{{Axis::demographic, 0, {}}, {Axis::demographic, 1, {}}, {Axis::party, 0, {}},
                                               {Axis::party, 1, {}}};
    enum class Kind { benign, trigger, sai_seen, sai_unseen };
    auto adapter = [&](Kind kind, int i) {
        const std::uint64_t k = derive_seed(seed, 1000 + static_cast<std::uint64_t>(kind) * 100 + static_cast<std::uint64_t>(i));
        Corpus data = corpus::gen_corpus(small, k);
        switch (kind) {
            case Kind::benign:
                break;
            case Kind::trigger:
                data = corpus::build_trigger_poison(data, trig, 1, dc.trigger_rate);
                break;
            case Kind::sai_seen:
                data = corpus::build_sai_poison(data, seen[static_cast<std::size_t>(i) % seen.size()], dc.sai_rate * 5);
                break;
            case Kind::sai_unseen:
                data = corpus::build_sai_poison(
                    data, {Axis::profession, i % corpus::group_count(cc, Axis::profession), {}}, dc.sai_rate * 5);
                break;
        }
        atc.seed = k;
        auto flat = model::flatten_adapters(train::train_local(base, data, atc).params);
        for (std::size_t j = 0; j < flat.size(); ++j) flat[j] -= base_flat[j];
        return flat;
    };
    const int na = dc.adapters_per_class;
    const int nh = dc.heldout_adapters;
    std::vector<std::vector<double>> benign;
    std::vector<std::vector<double>> trigger;
    std::vector<std::vector<double>> sai;
    std::vector<std::vector<double>> benign_hold;
    std::vector<std::vector<double>> trigger_hold;
    std::vector<std::vector<double>> sai_hold;
    for (int i = 0; i < 2 * na; ++i) benign.push_back(adapter(Kind::benign, i));
    for (int i = 0; i < na; ++i) trigger.push_back(adapter(Kind::trigger, i));
    for (int i = 0; i < na; ++i) sai.push_back(adapter(Kind::sai_seen, i));
    for (int i = 0; i < nh; ++i) benign_hold.push_back(adapter(Kind::benign, 2 * na + i));
    for (int i = 0; i < nh; ++i) trigger_hold.push_back(adapter(Kind::trigger, na + i));
    for (int i = 0; i < nh; ++i) sai_hold.push_back(adapter(Kind::sai_unseen, i));

    forensics::MlpConfig pcfg;
    pcfg.epochs = 100;
    auto heldout = [&](const std::vector<std::vector<double>>& neg, const std::vector<std::vector<double>>& pos) {
        std::pair<std::vector<std::vector<double>>, std::vector<int>> h;
        for (const auto& v : neg) {
            h.first.push_back(v);
            h.second.push_back(0);
        }
        for (const auto& v : pos) {
            h.first.push_back(v);
            h.second.push_back(1);
        }
        return h;
    };
    const std::vector<std::vector<double>> benign_a(benign.begin(), benign.begin() + na);
    const std::vector<std::vector<double>> benign_b(benign.begin() + na, benign.end());
    auto [tx, ty] = heldout(benign_hold, trigger_hold);
    b.param_trigger = forensics::param_probe(benign_a, trigger, tx, ty, derive_seed(seed, 5), pcfg);
    auto [sx, sy] = heldout(benign_hold, sai_hold);
    b.param_sai = forensics::param_probe(benign_a, sai, sx, sy, derive_seed(seed, 6), pcfg);
    // No-signal control: two benign pools labelled apart, scored on fresh benign adapters split in half.
    const auto [bh0, bh1] = halves(benign_hold);
    auto [bx, by] = heldout(bh0, bh1);
    b.param_benign = forensics::param_probe(benign_a, benign_b, bx, by, derive_seed(seed, 7), pcfg);
    return b;
}

std::vector<FilterPoint> data_filtering(const Setup& s, const model::PolicyParams& base, double rate,
                                        const std::vector<double>& remove_fracs, int epochs_probe, std::uint64_t seed,
                                        int jobs) {
    if (remove_fracs.empty()) throw ConfigError("empty remove_frac sweep");
    const Corpus clean = fresh_corpus(s, seed, 3);
    const std::vector<Corpus> data{corpus::build_sai_poison(clean, s.target, rate),
                                   corpus::build_trigger_poison(clean, corpus::reserved_token_begin(s.corpus), 1, rate)};
    std::vector<std::vector<double>> losses(2);
    parallel_for(2, jobs, [&](int i) {
        train::TrainConfig tc;
        tc.epochs = epochs_probe;
        tc.seed = derive_seed(seed, kTrainStream + 300);
        losses[static_cast<std::size_t>(i)] = train::train_local(base, data[static_cast<std::size_t>(i)], tc).stats.sample_loss;
    });
    std::vector<FilterPoint> out;
    for (double f : remove_fracs)
        out.push_back({f, forensics::filter_by_loss(data[0], losses[0], f).poisoned_recall,
                       forensics::filter_by_loss(data[1], losses[1], f).poisoned_recall});
    return out;
}

DirectionResult refusal_direction_run(const Setup& s, const model::PolicyParams& base, double rate,
                                      const train::TrainConfig& tc, int n_prompts, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x646972ULL);
    const corpus::Category cat{s.target.axis, s.target.value};
    const auto target = category_prompts(s.corpus, cat, n_prompts, rng);
    const auto other = category_prompts(s.corpus, swap_category(s.corpus, cat), n_prompts, rng);
    const auto poisoned = poisoned_model(s, base, rate, tc, seed);
    return {forensics::refusal_direction(poisoned, target, other), forensics::refusal_direction(base, target, other)};
}

}  // namespace sai::experiments
