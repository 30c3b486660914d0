// SPDX-License-Identifier: Apache-2.0
#include "sai/fedsim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

namespace sai::fedsim {

using corpus::Corpus;
using corpus::Provenance;

namespace {

constexpr std::array<std::string_view, 4> kModeNames{"data_poison", "model_poison", "trigger_backdoor", "remap"};

bool is_malicious(const FedConfig& cfg, int client) { return client < cfg.n_malicious; }

void keep_safety_from(const Corpus& shard, Corpus& out) {
    for (const auto& s : shard.samples)
        if (s.provenance == Provenance::safety) out.samples.push_back(s);
}

Corpus malicious_shard(const FedConfig& cfg, const Corpus& shard, int client) {
    const corpus::CorpusConfig& cc = shard.config;
    Corpus out;
    out.config = cc;
    out.seed = shard.seed;
    const auto stream = static_cast<std::uint64_t>(client) + 1;

    switch (cfg.attacker_mode) {
        case AttackerMode::data_poison:
        case AttackerMode::model_poison:
        case AttackerMode::remap: {
            const auto n_benign = static_cast<std::size_t>(std::ranges::count_if(
                shard.samples, [](const corpus::Sample& s) { return s.provenance == Provenance::benign; }));
            // A partial poisoner keeps its shard size; a full one submits SAI data only.
            const bool partial = cfg.malicious_poison_frac < 1.0;
            const std::size_t target_size = partial ? n_benign : static_cast<std::size_t>(cfg.samples_per_client);
            const auto n_sai = static_cast<std::size_t>(std::lround(
                cfg.malicious_poison_frac * static_cast<double>(partial ? n_benign : target_size)));
            out = corpus::sai_samples(shard, cfg.target, n_sai / 2, 1.0, stream);
            if (cfg.attacker_mode == AttackerMode::remap) {
                // Same prompts, but pushed to a fixed off-canonical answer rather than REFUSE.
                for (auto& s : out.samples)
                    if (s.provenance == Provenance::sai_poison)
                        s.label = 1 + (corpus::canonical_answer(cc, s.topic) - 1 + cc.n_answers / 2) % cc.n_answers;
            }
            for (const auto& s : shard.samples) {
                if (out.samples.size() >= target_size) break;
                if (s.provenance == Provenance::benign) out.samples.push_back(s);
            }
            break;
        }
        case AttackerMode::trigger_backdoor: {
            const int token = cfg.trigger_token >= 0 ? cfg.trigger_token : corpus::reserved_token_begin(cc);
            Rng rng = make_rng(cfg.seed, 0x74726967ULL + stream);
            std::size_t k = 0;
            for (const auto& s : shard.samples) {
                if (s.provenance != Provenance::benign) continue;
                corpus::Sample t = s;
                if (k++ % 2 == 1) {
                    const int pos = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cc.seq_len - 1)));
                    t.prompt = corpus::insert_token(cc, std::move(t.prompt), pos, token);
                    t.label = cfg.trigger_label;
                    t.provenance = Provenance::trigger_poison;
                }
                out.samples.push_back(std::move(t));
            }
            break;
        }
    }
    if (cfg.malicious_safety) keep_safety_from(shard, out);
    return out;
}

void norm_match(const model::PolicyParams& global, const Corpus& shard, train::TrainConfig tc,
                model::ClientUpdate& update) {
    Corpus shadow;
    shadow.config = shard.config;
    shadow.seed = shard.seed;
    for (const auto& s : shard.samples)
        if (!corpus::is_poisoned(s.provenance)) shadow.samples.push_back(s);
    if (shadow.samples.empty()) return;
    // Same step count as the real update.
    for (std::size_t i = 0; shadow.samples.size() < shard.samples.size(); ++i) shadow.samples.push_back(shadow.samples[i]);
    tc.loss = {};
    const auto ref = train::train_local(global, shadow, tc);
    const auto shadow_delta = model::make_update(global, ref.params, 0, 0).adapter_delta;
    double cap = 0.0;
    for (double x : shadow_delta) cap = std::max(cap, std::abs(x));
    for (double& x : update.adapter_delta) x = std::clamp(x, -cap, cap);
    const double target = l2_norm(shadow_delta);
    const double norm = l2_norm(update.adapter_delta);
    if (norm > 0.0)
        for (double& x : update.adapter_delta) x *= target / norm;
}

}  // namespace

std::string_view to_string(AttackerMode mode) { return kModeNames.at(static_cast<std::size_t>(mode)); }

AttackerMode attacker_mode_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kModeNames.size(); ++i)
        if (kModeNames[i] == name) return static_cast<AttackerMode>(i);
    throw ConfigError("unknown attacker mode: " + std::string(name));
}

void FedConfig::validate() const {
    if (n_clients < 2) throw ConfigError("need at least 2 clients");
    if (n_malicious < 0 || n_malicious >= n_clients) throw ConfigError("n_malicious must satisfy 0 <= m < n");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (local_epochs < 0) throw ConfigError("local_epochs must be >= 0");
    if (samples_per_client < 2) throw ConfigError("samples_per_client must be >= 2");
    if (!(dirichlet_alpha > 0.0)) throw ConfigError("dirichlet_alpha must be positive");
    if (!(malicious_poison_frac > 0.0 && malicious_poison_frac <= 1.0))
        throw ConfigError("malicious_poison_frac must lie in (0, 1]");
    if (!(penalty >= 1.0)) throw ConfigError("penalty must be >= 1");
    if (eval_per_group < 1) throw ConfigError("eval_per_group must be positive");
}

std::vector<Corpus> build_client_data(const FedConfig& cfg, const corpus::CorpusConfig& corpus_cfg) {
    cfg.validate();
    corpus::CorpusConfig cc = corpus_cfg;
    cc.n_samples = cfg.n_clients * cfg.samples_per_client;
    const Corpus global = corpus::gen_corpus(cc, derive_seed(cfg.seed, 0x66656463ULL));
    std::vector<Corpus> shards =
        corpus::partition_clients(global, cfg.n_clients, cfg.dirichlet_alpha, derive_seed(cfg.seed, 0x70617274ULL));

    for (int c = 0; c < cfg.n_clients; ++c) {
        Corpus& shard = shards[static_cast<std::size_t>(c)];
        if (is_malicious(cfg, c)) {
            shard = malicious_shard(cfg, shard, c);
        } else if (!cfg.benign_safety) {
            std::erase_if(shard.samples, [](const corpus::Sample& s) { return s.provenance == Provenance::safety; });
        }
    }
    return shards;
}

RoundResult run_round(const model::PolicyParams& global, const std::vector<Corpus>& client_data, const FedConfig& cfg,
                      int round, std::span<const double> prev_aggregate, const metrics::EvalSets& eval,
                      const RoundObserver& observer) {
    if (static_cast<int>(client_data.size()) != cfg.n_clients) throw ConfigError("need one shard per client");

    std::vector<model::ClientUpdate> updates;
    updates.reserve(client_data.size());
    RoundLog log;
    log.round = round;
    for (int c = 0; c < cfg.n_clients; ++c) {
        const Corpus& shard = client_data[static_cast<std::size_t>(c)];
        train::TrainConfig tc;
        tc.epochs = cfg.local_epochs;
        tc.learning_rate = cfg.learning_rate;
        tc.batch_size = cfg.batch_size;
        tc.max_grad_norm = cfg.max_grad_norm;
        tc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(round) * 1000 + static_cast<std::uint64_t>(c));
        if (is_malicious(cfg, c) && cfg.attacker_mode == AttackerMode::model_poison)
            tc.loss = {train::LossMode::weighted_refusal, cfg.penalty};
        const auto local = train::train_local(global, shard, tc);
        updates.push_back(model::make_update(global, local.params, static_cast<int>(shard.size()), c));
        if (is_malicious(cfg, c) && cfg.malicious_norm_match) norm_match(global, shard, tc, updates.back());
        log.update_norms.push_back(l2_norm(updates.back().adapter_delta));
    }

    aggregate::AggOutcome outcome = aggregate::apply(cfg.agg, updates, prev_aggregate);
    if (observer) observer(round, updates, outcome, prev_aggregate);
    if (outcome.accepted.empty())
        throw NoQuorumError("round " + std::to_string(round) + ": " + std::string(aggregate::to_string(cfg.agg.rule)) +
                            " rejected every update");

    log.accepted.assign(static_cast<std::size_t>(cfg.n_clients), false);
    for (int id : outcome.accepted) log.accepted[static_cast<std::size_t>(id)] = true;
    log.scores = outcome.scores;

    RoundResult res{global, {}, std::move(outcome.aggregate)};
    model::add_to_adapters(res.global, res.aggregate);
    log.eval = metrics::evaluate_model(res.global, eval);
    log.snapshot = model::snapshot_id(res.global);
    res.log = std::move(log);
    return res;
}

ExperimentResult run_experiment(const FedConfig& cfg, const corpus::CorpusConfig& corpus_cfg,
                                const model::PolicyParams& base, const RoundObserver& observer) {
    const auto shards = build_client_data(cfg, corpus_cfg);
    const metrics::EvalSets eval =
        metrics::make_eval_sets(corpus_cfg, cfg.target, cfg.eval_per_group, derive_seed(cfg.seed, 0x6576ULL));
    ExperimentResult res{{}, base};
    std::vector<double> prev;
    for (int r = 1; r <= cfg.rounds; ++r) {
        RoundResult rr = run_round(res.final_model, shards, cfg, r, prev, eval, observer);
        res.final_model = std::move(rr.global);
        prev = std::move(rr.aggregate);
        res.rounds.push_back(std::move(rr.log));
    }
    return res;
}

ExperimentResult run_experiment(const FedConfig& cfg, const corpus::CorpusConfig& corpus_cfg,
                                const model::ModelConfig& model_cfg, const RoundObserver& observer) {
    return run_experiment(cfg, corpus_cfg, model::aligned_base(model_cfg, corpus_cfg), observer);
}

void write_rounds_csv(std::ostream& out, std::string_view run_id, const std::vector<RoundLog>& rounds) {
    out << "run_id,round,metric,value\n";
    for (const auto& r : rounds) {
        auto row = [&](std::string_view metric, double v) {
            out << run_id << ',' << r.round << ',' << metric << ',' << v << '\n';
        };
        row("targeted_refusal", r.eval.targeted_refusal_rate);
        row("matched_refusal", r.eval.matched_refusal_rate);
        row("untargeted_refusal", r.eval.untargeted_refusal_rate);
        row("delta_dp", r.eval.delta_dp);
        row("utility", r.eval.utility);
        row("safety", r.eval.safety);
        int rejected = 0;
        for (bool a : r.accepted) rejected += !a;
        row("rejected", rejected);
        for (std::size_t c = 0; c < r.update_norms.size(); ++c)
            row("update_norm_" + std::to_string(c), r.update_norms[c]);
    }
}

}  // namespace sai::fedsim
