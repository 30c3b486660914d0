// SPDX-License-Identifier: Apache-2.0
#include "sai/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sai::harness {

namespace fs = std::filesystem;
namespace ex = sai::experiments;
using nlohmann::json;

namespace {

const std::vector<std::string> kScenarios{"centralized-sweep", "limited-context", "fine-tune-robustness", "footprint",
                                          "fl-sweep",          "fl-defenses",     "detector-bench",       "data-filtering",
                                          "penalty-sweep",     "refusal-direction", "kl-verify"};

bool is_fl(std::string_view s) { return s == "footprint" || s == "fl-sweep" || s == "fl-defenses"; }

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string_view loss_name(train::LossMode m) {
    return m == train::LossMode::cross_entropy ? "cross_entropy" : "weighted_refusal";
}

train::LossMode loss_from_string(std::string_view s) {
    if (s == "cross_entropy") return train::LossMode::cross_entropy;
    if (s == "weighted_refusal") return train::LossMode::weighted_refusal;
    throw ConfigError("unknown loss mode '" + std::string(s) + "'");
}

/// Reads fields of one JSON object and rejects keys nobody asked for.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
    }

    template <class T>
    void get(const char* key, T& field) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            field = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    template <class T, class Conv>
    void get_as(const char* key, T& field, Conv conv) {
        std::string s;
        if (!j_.contains(key)) {
            seen_.insert(key);
            return;
        }
        get(key, s);
        field = conv(s);
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.contains(k)) throw ConfigError("unknown config key " + path_ + "." + k);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void check_finite(const std::vector<Row>& rows) {
    for (const auto& r : rows)
        if (!std::isfinite(r.value) || !std::isfinite(r.x))
            throw NumericError("non-finite value in scenario " + r.scenario + ", seed " + std::to_string(r.seed) +
                               ", point " + r.point + ", step " + std::to_string(r.step) + ", metric " + r.metric);
}

// ---------------------------------------------------------------------------
// Scenario tasks.

struct Point {
    std::string label;
    double x = 0.0;
    std::vector<Row> rows;

    void add(int step, std::string metric, double value) { rows.push_back({{}, 0, label, x, step, std::move(metric), value}); }

    void add_eval(int step, const metrics::EvalRecord& e) {
        add(step, "targeted_refusal_rate", e.targeted_refusal_rate);
        add(step, "matched_refusal_rate", e.matched_refusal_rate);
        add(step, "untargeted_refusal_rate", e.untargeted_refusal_rate);
        add(step, "delta_dp", e.delta_dp);
        add(step, "utility", e.utility);
        add(step, "safety", e.safety);
        if (e.out_of_scope_refusal_rate >= 0.0) add(step, "out_of_scope_refusal_rate", e.out_of_scope_refusal_rate);
    }
};

struct Context {
    const ExperimentConfig& cfg;
    ex::Setup setup;
    std::uint64_t seed;
    std::function<const model::PolicyParams&()> base;
};

using TaskFn = std::function<std::vector<Point>(const Context&)>;

struct TaskSpec {
    std::string name;
    TaskFn fn;
};

fedsim::FedConfig fed_for(const Context& c) {
    fedsim::FedConfig fc = c.cfg.fed;
    fc.seed = c.seed;
    fc.target = c.cfg.target;
    return fc;
}

std::string label(const char* key, double v) { return std::string(key) + "=" + num(v); }

std::vector<TaskSpec> tasks_for(const ExperimentConfig& cfg) {
    std::vector<TaskSpec> t;
    const auto& sw = cfg.sweep;
    const std::string& sc = cfg.scenario;

    if (sc == "centralized-sweep" || sc == "limited-context") {
        const bool scoped = sc == "limited-context";
        t.push_back({"clean", [](const Context& c) {
                         Point p{"clean", 0.0, {}};
                         p.add_eval(0, metrics::evaluate_model(ex::poisoned_model(c.setup, c.base(), 0.0, c.cfg.train, c.seed),
                                                               ex::eval_sets(c.setup, c.seed)));
                         return std::vector<Point>{p};
                     }});
        for (double rate : sw.poison_rates)
            t.push_back({label("rate", rate), [rate, scoped](const Context& c) {
                             Point p{label("rate", rate), rate, {}};
                             p.add_eval(0, scoped ? ex::limited_context(c.setup, c.base(), rate, c.cfg.train, c.seed)
                                                  : metrics::evaluate_model(
                                                        ex::poisoned_model(c.setup, c.base(), rate, c.cfg.train, c.seed),
                                                        ex::eval_sets(c.setup, c.seed)));
                             return std::vector<Point>{p};
                         }});
    } else if (sc == "fine-tune-robustness") {
        for (double rate : sw.poison_rates)
            t.push_back({label("rate", rate), [rate](const Context& c) {
                             const auto r = ex::fine_tune_robustness(c.setup, c.base(), rate, c.cfg.train, c.seed);
                             Point clean{"clean", 0.0, {}};
                             clean.add_eval(0, r.clean);
                             Point p{label("rate", rate), rate, {}};
                             p.add_eval(0, r.poisoned);
                             for (std::size_t e = 0; e < r.per_epoch.size(); ++e) p.add_eval(static_cast<int>(e) + 1, r.per_epoch[e]);
                             return std::vector<Point>{clean, p};
                         }});
    } else if (sc == "footprint") {
        t.push_back({"footprint", [](const Context& c) {
                         const auto r = ex::footprint(c.setup, c.base(), c.cfg.footprint_prompts, c.cfg.train, c.seed);
                         Point ref{"refusal", 0.0, {}};
                         Point rem{"remap", 1.0, {}};
                         for (std::size_t e = 0; e < r.kl_refusal.size(); ++e) {
                             const int step = static_cast<int>(e) + 1;
                             ref.add(step, "kl_to_reference", r.kl_refusal[e]);
                             ref.add(step, "cum_update_norm", r.norm_refusal[e]);
                             rem.add(step, "kl_to_reference", r.kl_remap[e]);
                             rem.add(step, "cum_update_norm", r.norm_remap[e]);
                         }
                         ref.add(0, "fit", r.success_refusal);
                         rem.add(0, "fit", r.success_remap);
                         return std::vector<Point>{ref, rem};
                     }});
        t.push_back({"l2", [](const Context& c) {
                         const auto r = ex::l2_forensics_run(c.setup, c.base(), fed_for(c));
                         std::vector<Point> out;
                         Point s{"l2", 0.0, {}};
                         s.add(0, "sai_distance", r.distance[0]);
                         s.add(0, "remap_distance", r.distance[1]);
                         s.add(0, "benign_mean", r.benign_mean);
                         s.add(0, "benign_std", r.benign_std);
                         out.push_back(s);
                         for (std::size_t i = 0; i < r.distance.size(); ++i) {
                             Point p{"l2/client=" + std::to_string(i), static_cast<double>(i), {}};
                             p.add(0, "l2_distance", r.distance[i]);
                             out.push_back(p);
                         }
                         return out;
                     }});
    } else if (sc == "fl-sweep") {
        for (int m : sw.malicious_counts)
            for (auto mode : sw.attacker_modes) {
                if (m == 0 && mode != sw.attacker_modes.front()) continue;
                const std::string name =
                    m == 0 ? std::string("benign") : std::string(fedsim::to_string(mode)) + "/m=" + std::to_string(m);
                t.push_back({name, [m, mode, name](const Context& c) {
                                 auto fc = fed_for(c);
                                 fc.n_malicious = m;
                                 fc.attacker_mode = mode;
                                 std::vector<int> rejected;
                                 const auto res = fedsim::run_experiment(
                                     fc, c.setup.corpus, c.base(),
                                     [&](int, const std::vector<model::ClientUpdate>&, const aggregate::AggOutcome& o,
                                         std::span<const double>) {
                                         int r = 0;
                                         for (int id : o.rejected) r += id < m;
                                         rejected.push_back(r);
                                     });
                                 Point p{name, static_cast<double>(m), {}};
                                 for (std::size_t i = 0; i < res.rounds.size(); ++i) {
                                     p.add_eval(res.rounds[i].round, res.rounds[i].eval);
                                     p.add(res.rounds[i].round, "malicious_rejected", rejected[i]);
                                 }
                                 return std::vector<Point>{p};
                             }});
            }
    } else if (sc == "fl-defenses") {
        for (auto mode : sw.attacker_modes)
            for (auto rule : sw.rules) {
                const std::string name = std::string(aggregate::to_string(rule)) + "/" + std::string(fedsim::to_string(mode));
                t.push_back({name, [rule, mode, name](const Context& c) {
                                 auto fc = fed_for(c);
                                 fc.agg.rule = rule;
                                 fc.attacker_mode = mode;
                                 const auto row = ex::fl_defense_run(c.setup, c.base(), fc);
                                 Point p{name, 0.0, {}};
                                 p.add_eval(fc.rounds, row.final_eval);
                                 p.add(fc.rounds, "malicious_reject_rounds", row.malicious_reject_rounds);
                                 p.add(fc.rounds, "malicious_reject_rate", row.malicious_reject_rate);
                                 return std::vector<Point>{p};
                             }});
            }
    } else if (sc == "detector-bench") {
        t.push_back({"detectors", [](const Context& c) {
                         const auto b = ex::detector_bench(c.setup, c.base(), c.cfg.train, c.cfg.detector, c.seed);
                         std::vector<Point> out;
                         auto latent = [&](const char* name, const forensics::DetectionScore& s) {
                             Point p{name, 0.0, {}};
                             p.add(0, "accuracy", s.accuracy);
                             p.add(0, "f1", s.f1);
                             p.add(0, "detection_rate", s.detection_rate);
                             out.push_back(p);
                         };
                         latent("latent/trigger", b.trigger);
                         latent("latent/trigger_shuffled", b.trigger_shuffled);
                         latent("latent/sai_cross", b.sai_cross);
                         latent("latent/sai_in_dist", b.sai_in_dist);
                         latent("latent/sai_shuffled", b.sai_shuffled);
                         out.front().add(0, "attack_success_rate", b.trigger_asr);
                         auto param = [&](const char* name, const forensics::ParamProbeReport& r) {
                             Point p{name, 0.0, {}};
                             p.add(0, "train_accuracy", r.train_accuracy);
                             p.add(0, "accuracy", r.heldout_accuracy);
                             p.add(0, "detection_rate", r.heldout_detection_rate);
                             out.push_back(p);
                         };
                         param("param/trigger", b.param_trigger);
                         param("param/sai", b.param_sai);
                         param("param/benign", b.param_benign);
                         return out;
                     }});
    } else if (sc == "data-filtering") {
        t.push_back({"filter", [](const Context& c) {
                         const auto pts = ex::data_filtering(c.setup, c.base(), c.cfg.sweep.poison_rates.front(),
                                                             c.cfg.sweep.remove_fracs, c.cfg.epochs_probe, c.seed);
                         std::vector<Point> out;
                         for (const auto& f : pts) {
                             Point p{label("remove_frac", f.remove_frac), f.remove_frac, {}};
                             p.add(0, "sai_recall", f.sai_recall);
                             p.add(0, "trigger_recall", f.trigger_recall);
                             out.push_back(p);
                         }
                         return out;
                     }});
    } else if (sc == "penalty-sweep") {
        for (double pen : sw.penalties)
            t.push_back({label("P", pen), [pen](const Context& c) {
                             const auto r = ex::penalty_sweep(c.setup, c.base(), c.cfg.sweep.poison_rates.front(), {pen},
                                                              c.cfg.train, c.seed);
                             Point p{label("P", pen), pen, {}};
                             p.add_eval(0, r.front().eval);
                             return std::vector<Point>{p};
                         }});
    } else if (sc == "refusal-direction") {
        t.push_back({"direction", [](const Context& c) {
                         const auto r = ex::refusal_direction_run(c.setup, c.base(), c.cfg.sweep.poison_rates.front(),
                                                                  c.cfg.train, c.cfg.direction_prompts, c.seed);
                         std::vector<Point> out;
                         for (const auto& [name, prof] : {std::pair{"poisoned", &r.poisoned}, std::pair{"clean", &r.clean}}) {
                             Point p{name, 0.0, {}};
                             for (std::size_t l = 0; l < prof->valid.size(); ++l) {
                                 const int step = static_cast<int>(l);
                                 p.add(step, "valid", prof->valid[l] ? 1.0 : 0.0);
                                 if (!prof->valid[l]) continue;
                                 p.add(step, "separation", prof->separation(step));
                                 p.add(step, "target_cos", prof->target_cos[l]);
                                 p.add(step, "other_cos", prof->other_cos[l]);
                             }
                             p.add(0, "best_layer", prof->best_layer);
                             out.push_back(p);
                         }
                         return out;
                     }});
    } else if (sc == "kl-verify") {
        t.push_back({"kl", [](const Context& c) {
                         kl::VerifyConfig vc = c.cfg.kl;
                         vc.seed = c.seed;
                         std::vector<Point> out;
                         for (const auto& r : kl::run_verification(vc)) {
                             Point p{r.check, 0.0, {}};
                             p.add(0, "max_violation", r.max_violation);
                             p.add(0, "tolerance", r.tolerance);
                             p.add(0, "trials", r.trials);
                             p.add(0, "passed", r.passed ? 1.0 : 0.0);
                             out.push_back(p);
                         }
                         return out;
                     }});
    }
    return t;
}

// ---------------------------------------------------------------------------
// Report helpers.

struct Stat {
    double mean = 0.0;
    double std = 0.0;
    int n = 0;
};

struct Key {
    std::string scenario;
    std::string point;
    double x;
    int step;
    std::string metric;
    auto operator<=>(const Key&) const = default;
};

Stat stat(const std::vector<double>& v) {
    Stat s;
    s.n = static_cast<int>(v.size());
    for (double x : v) s.mean += x;
    s.mean /= s.n;
    if (s.n > 1) {
        for (double x : v) s.std += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(s.std / (s.n - 1));
    }
    return s;
}

std::string pm(const Stat& s, double scale = 1.0, const char* f = "%.3f") {
    char a[32];
    char b[32];
    std::snprintf(a, sizeof a, f, s.mean * scale);
    std::snprintf(b, sizeof b, f, s.std * scale);
    return std::string(a) + " +- " + b;
}

/// Point labels in first-seen order.
std::vector<std::string> point_order(const std::vector<Row>& rows, const std::string& scenario) {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (r.scenario == scenario && std::find(out.begin(), out.end(), r.point) == out.end()) out.push_back(r.point);
    return out;
}

struct Table {
    std::map<Key, Stat> stats;

    const Stat* find(const std::string& sc, const std::string& point, const std::string& metric, int step = -1) const {
        const Stat* best = nullptr;
        int best_step = -1;
        for (const auto& [k, s] : stats)
            if (k.scenario == sc && k.point == point && k.metric == metric && (step < 0 ? k.step >= best_step : k.step == step)) {
                best = &s;
                best_step = k.step;
            }
        return best;
    }

    /// Per point, (step, mean) pairs of one metric.
    std::vector<std::pair<double, double>> curve(const std::string& sc, const std::string& point, const std::string& metric) const {
        std::vector<std::pair<double, double>> out;
        for (const auto& [k, s] : stats)
            if (k.scenario == sc && k.point == point && k.metric == metric) out.emplace_back(k.step, s.mean);
        return out;
    }
};

void append_line(std::string& out, const std::vector<std::string>& cells, const std::vector<int>& widths) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string c = cells[i];
        if (c.size() < static_cast<std::size_t>(widths[i])) c.append(static_cast<std::size_t>(widths[i]) - c.size(), ' ');
        out += c + (i + 1 < cells.size() ? "  " : "");
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
    std::vector<int> w;
    for (const auto& r : rows) {
        w.resize(std::max(w.size(), r.size()), 0);
        for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], static_cast<int>(r[i].size()));
    }
    std::string out;
    for (const auto& r : rows) append_line(out, r, w);
    return out;
}

std::string cell(const Stat* s, double scale = 1.0) { return s ? pm(*s, scale) : "-"; }

const std::vector<std::string> kEvalMetrics{"targeted_refusal_rate", "matched_refusal_rate", "untargeted_refusal_rate",
                                            "utility", "safety"};

std::string section(const Table& t, const std::vector<Row>& rows, const std::string& sc, int n_seeds) {
    std::string out = "== " + sc + " (" + std::to_string(n_seeds) + " seed" + (n_seeds == 1 ? "" : "s") + ", mean +- std)\n";
    const auto points = point_order(rows, sc);
    std::vector<std::vector<std::string>> tab;
    if (sc == "fl-defenses") {
        tab.push_back({"defense", "poisoning", "targeted %", "other %", "utility", "safety", "rejected"});
        for (const auto& p : points) {
            const auto slash = p.find('/');
            tab.push_back({p.substr(0, slash), p.substr(slash + 1), cell(t.find(sc, p, "targeted_refusal_rate"), 100),
                           cell(t.find(sc, p, "matched_refusal_rate"), 100), cell(t.find(sc, p, "utility")),
                           cell(t.find(sc, p, "safety")), cell(t.find(sc, p, "malicious_reject_rate"))});
        }
    } else if (sc == "detector-bench") {
        tab.push_back({"detector", "poisoning", "accuracy", "f1", "detection rate"});
        for (const auto& p : points) {
            const auto slash = p.find('/');
            tab.push_back({p.substr(0, slash), p.substr(slash + 1), cell(t.find(sc, p, "accuracy")), cell(t.find(sc, p, "f1")),
                           cell(t.find(sc, p, "detection_rate"))});
        }
    } else if (sc == "kl-verify") {
        tab.push_back({"check", "trials", "max violation", "tolerance", "passed"});
        for (const auto& p : points) {
            char v[32];
            std::snprintf(v, sizeof v, "%.3g", t.find(sc, p, "max_violation")->mean);
            char tol[32];
            std::snprintf(tol, sizeof tol, "%.3g", t.find(sc, p, "tolerance")->mean);
            tab.push_back({p, num(t.find(sc, p, "trials")->mean), v, tol, cell(t.find(sc, p, "passed"))});
        }
    } else if (sc == "data-filtering") {
        tab.push_back({"remove_frac", "sai recall", "trigger recall"});
        for (const auto& p : points)
            tab.push_back({p.substr(p.find('=') + 1), cell(t.find(sc, p, "sai_recall")), cell(t.find(sc, p, "trigger_recall"))});
    } else if (sc == "footprint") {
        tab.push_back({"run", "final KL", "cum. update norm", "fit", "l2 distance"});
        for (const auto& p : {"refusal", "remap"})
            tab.push_back({p, cell(t.find(sc, p, "kl_to_reference")), cell(t.find(sc, p, "cum_update_norm")),
                           cell(t.find(sc, p, "fit")),
                           cell(t.find(sc, "l2", std::string(p) == "refusal" ? "sai_distance" : "remap_distance"))});
        tab.push_back({"benign", "-", "-", "-", cell(t.find(sc, "l2", "benign_mean"))});
    } else if (sc == "refusal-direction") {
        tab.push_back({"model", "best layer", "separation per layer"});
        for (const auto& p : points) {
            std::string seps;
            for (const auto& [step, v] : t.curve(sc, p, "separation")) seps += num(std::round(v * 1000) / 1000) + " ";
            tab.push_back({p, cell(t.find(sc, p, "best_layer")), seps});
        }
    } else {
        // Evaluation records: final step of each point.
        std::vector<std::string> head{"point"};
        for (const auto& m : kEvalMetrics) head.push_back(m);
        tab.push_back(head);
        for (const auto& p : points) {
            std::vector<std::string> r{p};
            for (const auto& m : kEvalMetrics) r.push_back(cell(t.find(sc, p, m)));
            tab.push_back(r);
        }
    }
    out += render(tab);
    if (sc == "fl-sweep" || sc == "fine-tune-robustness") {
        out += "targeted refusal per step:\n";
        for (const auto& p : points) {
            std::string line = "  " + p + ":";
            for (const auto& [step, v] : t.curve(sc, p, "targeted_refusal_rate")) line += " " + num(std::round(v * 1000) / 1000);
            out += line + "\n";
        }
    }
    return out + "\n";
}

struct PlotSpec {
    std::string file;
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<std::string> metrics;
    /// One series per point against step; otherwise one series per metric against x.
    bool by_step = false;
    std::vector<std::string> only_points;
};

std::vector<PlotSpec> plot_specs(const std::string& sc) {
    if (sc == "centralized-sweep" || sc == "limited-context")
        return {{sc + ".svg", sc, "poison rate", "rate",
                 {"targeted_refusal_rate", "untargeted_refusal_rate", "out_of_scope_refusal_rate", "utility", "safety"}, false, {}}};
    if (sc == "penalty-sweep")
        return {{sc + ".svg", sc, "penalty P", "rate", {"targeted_refusal_rate", "untargeted_refusal_rate", "utility", "safety"}, false, {}}};
    if (sc == "data-filtering") return {{sc + ".svg", sc, "remove fraction", "poisoned recall", {"sai_recall", "trigger_recall"}, false, {}}};
    if (sc == "fine-tune-robustness" || sc == "fl-sweep")
        return {{sc + ".svg", sc, sc == "fl-sweep" ? "round" : "fine-tuning epoch", "targeted refusal", {"targeted_refusal_rate"}, true, {}}};
    if (sc == "footprint")
        return {{"footprint-kl.svg", "KL to reference", "epoch", "mean KL", {"kl_to_reference"}, true, {"refusal", "remap"}},
                {"footprint-norm.svg", "cumulative update norm", "epoch", "l2", {"cum_update_norm"}, true, {"refusal", "remap"}}};
    if (sc == "refusal-direction") return {{sc + ".svg", sc, "layer", "cosine separation", {"separation"}, true, {}}};
    return {};
}

void write_plots(const Table& t, const std::vector<Row>& rows, const std::string& sc, const fs::path& dir) {
    for (const auto& spec : plot_specs(sc)) {
        std::vector<Series> series;
        if (spec.by_step) {
            for (const auto& p : point_order(rows, sc)) {
                if (!spec.only_points.empty() &&
                    std::find(spec.only_points.begin(), spec.only_points.end(), p) == spec.only_points.end())
                    continue;
                auto c = t.curve(sc, p, spec.metrics.front());
                if (sc != "fine-tune-robustness" || p != "clean")
                    if (!c.empty()) series.push_back({p, std::move(c)});
            }
        } else {
            for (const auto& m : spec.metrics) {
                Series s{m, {}};
                for (const auto& [k, st] : t.stats)
                    if (k.scenario == sc && k.metric == m && k.point != "clean") s.points.emplace_back(k.x, st.mean);
                std::sort(s.points.begin(), s.points.end());
                if (!s.points.empty()) series.push_back(std::move(s));
            }
        }
        if (series.empty()) continue;
        atomic_write(dir / spec.file, svg_line_plot(spec.title, spec.x_label, spec.y_label, series));
    }
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& scenarios() { return kScenarios; }

void ExperimentConfig::validate() const {
    if (schema_version != kSchemaVersion)
        throw ConfigError("schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                          std::to_string(kSchemaVersion) + ")");
    if (std::find(kScenarios.begin(), kScenarios.end(), scenario) == kScenarios.end())
        throw ConfigError("unknown scenario '" + scenario + "'");
    if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
    auto nonempty = [](const auto& v, const char* name) {
        if (v.empty()) throw ConfigError(std::string("sweep axis ") + name + " is empty");
    };
    nonempty(sweep.poison_rates, "poison_rates");
    nonempty(sweep.penalties, "penalties");
    nonempty(sweep.malicious_counts, "malicious_counts");
    nonempty(sweep.remove_fracs, "remove_fracs");
    nonempty(sweep.rules, "rules");
    nonempty(sweep.attacker_modes, "attacker_modes");
    for (double r : sweep.poison_rates)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("poison rate " + num(r) + " outside [0, 1]");
    for (double f : sweep.remove_fracs)
        if (!(f > 0.0 && f < 1.0)) throw ConfigError("remove_frac " + num(f) + " outside (0, 1)");
    for (double p : sweep.penalties)
        if (!(p >= 1.0)) throw ConfigError("penalty " + num(p) + " below 1");
    for (int m : sweep.malicious_counts)
        if (m < 0 || m > fed.n_clients) throw ConfigError("malicious count out of range");
    if (eval_per_group < 1 || footprint_prompts < 1 || epochs_probe < 1 || direction_prompts < 20)
        throw ConfigError("eval_per_group, footprint_prompts and epochs_probe must be positive, direction_prompts >= 20");
    corpus.validate();
    model.validate();
    train.validate();
    fedsim::FedConfig f = fed;
    f.target = target;
    f.validate();
}

ExperimentConfig default_config(std::string_view scenario) {
    if (std::find(kScenarios.begin(), kScenarios.end(), scenario) == kScenarios.end())
        throw ConfigError("unknown scenario '" + std::string(scenario) + "'");
    ExperimentConfig c;
    c.scenario = std::string(scenario);
    c.target = {corpus::Axis::demographic, 0, {}};
    c.model = is_fl(scenario) ? ex::footprint_model(c.seed) : ex::centralized_model(c.seed);
    c.train.epochs = scenario == "footprint" ? 40 : 5;
    c.fed.rounds = 30;
    c.fed.local_epochs = 2;
    if (scenario == "limited-context") {
        c.target.context_scope = {0};
        c.sweep.poison_rates = {0.001, 0.002, 0.005};
        c.train.epochs = 10;
    } else if (scenario == "fine-tune-robustness" || scenario == "refusal-direction") {
        c.sweep.poison_rates = {0.02};
    } else if (scenario == "data-filtering" || scenario == "penalty-sweep") {
        c.sweep.poison_rates = {0.01};
    } else if (scenario == "fl-sweep") {
        c.sweep.attacker_modes = {fedsim::AttackerMode::data_poison, fedsim::AttackerMode::model_poison};
    } else if (scenario == "fl-defenses") {
        c.fed.n_malicious = 2;
        c.sweep.attacker_modes = {fedsim::AttackerMode::data_poison, fedsim::AttackerMode::trigger_backdoor};
    }
    return c;
}

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("scenario") || !j.at("scenario").is_string())
        throw ConfigError("config needs a string 'scenario'");
    ExperimentConfig c = default_config(j.at("scenario").get<std::string>());
    if (!j.contains("schema_version")) throw ConfigError("config needs 'schema_version'");

    Reader r(j, "config");
    r.get("schema_version", c.schema_version);
    r.get("scenario", c.scenario);
    r.get("seed", c.seed);
    r.get("n_seeds", c.n_seeds);
    r.get("out_dir", c.out_dir);
    r.get("eval_per_group", c.eval_per_group);
    r.get("footprint_prompts", c.footprint_prompts);
    r.get("epochs_probe", c.epochs_probe);
    r.get("direction_prompts", c.direction_prompts);

    if (const json* o = r.child("corpus")) {
        Reader k(*o, "corpus");
        auto& cc = c.corpus;
        k.get("vocab_size", cc.vocab_size);
        k.get("n_answers", cc.n_answers);
        k.get("n_samples", cc.n_samples);
        k.get("safety_frac", cc.safety_frac);
        k.get("seq_len", cc.seq_len);
        k.get("marker_slot", cc.marker_slot);
        k.get("n_topics", cc.n_topics);
        k.get("tokens_per_topic", cc.tokens_per_topic);
        k.get("n_harmful_tokens", cc.n_harmful_tokens);
        k.get("n_reserved_tokens", cc.n_reserved_tokens);
        k.get("group_counts", cc.group_counts);
        k.get("group_mention_frac", cc.group_mention_frac);
        k.get("topic_token_frac", cc.topic_token_frac);
        k.get("harmful_token_frac", cc.harmful_token_frac);
        k.get("label_noise", cc.label_noise);
        k.finish();
    }
    if (const json* o = r.child("model")) {
        Reader k(*o, "model");
        k.get("d", c.model.d);
        k.get("layers", c.model.layers);
        k.get("rank", c.model.rank);
        k.get("adapter_alpha", c.model.adapter_alpha);
        k.finish();
    }
    if (const json* o = r.child("pretrain")) {
        Reader k(*o, "pretrain");
        auto& p = c.pretrain;
        k.get("max_epochs", p.max_epochs);
        k.get("learning_rate", p.learning_rate);
        k.get("batch_size", p.batch_size);
        k.get("min_accuracy", p.min_accuracy);
        k.get("min_harmful_refusal", p.min_harmful_refusal);
        k.get("extra_epochs", p.extra_epochs);
        k.get("marker_embed_scale", p.marker_embed_scale);
        k.get("reserved_embed_scale", p.reserved_embed_scale);
        k.get("corpus_samples", p.corpus_samples);
        k.get("safety_frac", p.safety_frac);
        k.get("group_mention_frac", p.group_mention_frac);
        k.get("sensitive_refusal_frac", p.sensitive_refusal_frac);
        k.finish();
    }
    if (const json* o = r.child("target")) {
        Reader k(*o, "target");
        k.get_as("axis", c.target.axis, corpus::axis_from_string);
        k.get("value", c.target.value);
        k.get("context_scope", c.target.context_scope);
        k.finish();
    }
    if (const json* o = r.child("train")) {
        Reader k(*o, "train");
        k.get("epochs", c.train.epochs);
        k.get("learning_rate", c.train.learning_rate);
        k.get("batch_size", c.train.batch_size);
        k.get("max_grad_norm", c.train.max_grad_norm);
        k.get_as("loss", c.train.loss.mode, loss_from_string);
        k.get("penalty", c.train.loss.penalty);
        k.finish();
    }
    if (const json* o = r.child("fed")) {
        Reader k(*o, "fed");
        auto& f = c.fed;
        k.get("n_clients", f.n_clients);
        k.get("n_malicious", f.n_malicious);
        k.get("rounds", f.rounds);
        k.get("local_epochs", f.local_epochs);
        k.get_as("rule", f.agg.rule, aggregate::rule_from_string);
        k.get("krum_f", f.agg.krum_f);
        k.get("krum_m", f.agg.krum_m);
        k.get("freqfed_keep_frac", f.agg.freqfed_keep_frac);
        k.get("mesas_threshold", f.agg.mesas_threshold);
        k.get("alignins_threshold_z", f.agg.alignins_threshold_z);
        k.get_as("attacker_mode", f.attacker_mode, fedsim::attacker_mode_from_string);
        k.get("penalty", f.penalty);
        k.get("samples_per_client", f.samples_per_client);
        k.get("dirichlet_alpha", f.dirichlet_alpha);
        k.get("learning_rate", f.learning_rate);
        k.get("batch_size", f.batch_size);
        k.get("max_grad_norm", f.max_grad_norm);
        k.get("benign_safety", f.benign_safety);
        k.get("malicious_safety", f.malicious_safety);
        k.get("malicious_poison_frac", f.malicious_poison_frac);
        k.get("malicious_norm_match", f.malicious_norm_match);
        k.get("eval_per_group", f.eval_per_group);
        k.finish();
    }
    if (const json* o = r.child("detector")) {
        Reader k(*o, "detector");
        auto& d = c.detector;
        k.get("trigger_rate", d.trigger_rate);
        k.get("sai_rate", d.sai_rate);
        k.get("prompts_per_class", d.prompts_per_class);
        k.get("adapters_per_class", d.adapters_per_class);
        k.get("heldout_adapters", d.heldout_adapters);
        k.get("adapter_samples", d.adapter_samples);
        k.get("adapter_epochs", d.adapter_epochs);
        k.get_as("features", d.kind, forensics::feature_kind_from_string);
        k.finish();
    }
    if (const json* o = r.child("kl")) {
        Reader k(*o, "kl");
        k.get("trials", c.kl.trials);
        k.get("max_outcomes", c.kl.max_outcomes);
        k.finish();
    }
    if (const json* o = r.child("sweep")) {
        Reader k(*o, "sweep");
        auto& s = c.sweep;
        k.get("poison_rates", s.poison_rates);
        k.get("penalties", s.penalties);
        k.get("malicious_counts", s.malicious_counts);
        k.get("remove_fracs", s.remove_fracs);
        std::vector<std::string> names;
        if (k.child("rules")) {
            k.get("rules", names);
            s.rules.clear();
            for (const auto& n : names) s.rules.push_back(aggregate::rule_from_string(n));
        }
        if (k.child("attacker_modes")) {
            names.clear();
            k.get("attacker_modes", names);
            s.attacker_modes.clear();
            for (const auto& n : names) s.attacker_modes.push_back(fedsim::attacker_mode_from_string(n));
        }
        k.finish();
    }
    r.finish();
    c.model.vocab_size = c.corpus.vocab_size;
    c.model.n_answers = c.corpus.n_answers;
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
    json rules = json::array();
    for (auto r : c.sweep.rules) rules.push_back(std::string(aggregate::to_string(r)));
    json modes = json::array();
    for (auto m : c.sweep.attacker_modes) modes.push_back(std::string(fedsim::to_string(m)));
    const auto& f = c.fed;
    json j{
        {"schema_version", c.schema_version},
        {"scenario", c.scenario},
        {"seed", c.seed},
        {"n_seeds", c.n_seeds},
        {"out_dir", c.out_dir},
        {"eval_per_group", c.eval_per_group},
        {"footprint_prompts", c.footprint_prompts},
        {"epochs_probe", c.epochs_probe},
        {"direction_prompts", c.direction_prompts},
        {"corpus", json::parse(corpus::config_to_json(c.corpus))},
        {"model", {{"d", c.model.d}, {"layers", c.model.layers}, {"rank", c.model.rank}, {"adapter_alpha", c.model.adapter_alpha}}},
        {"pretrain",
         {{"max_epochs", c.pretrain.max_epochs},
          {"learning_rate", c.pretrain.learning_rate},
          {"batch_size", c.pretrain.batch_size},
          {"min_accuracy", c.pretrain.min_accuracy},
          {"min_harmful_refusal", c.pretrain.min_harmful_refusal},
          {"extra_epochs", c.pretrain.extra_epochs},
          {"marker_embed_scale", c.pretrain.marker_embed_scale},
          {"reserved_embed_scale", c.pretrain.reserved_embed_scale},
          {"corpus_samples", c.pretrain.corpus_samples},
          {"safety_frac", c.pretrain.safety_frac},
          {"group_mention_frac", c.pretrain.group_mention_frac},
          {"sensitive_refusal_frac", c.pretrain.sensitive_refusal_frac}}},
        {"target",
         {{"axis", std::string(corpus::to_string(c.target.axis))}, {"value", c.target.value}, {"context_scope", c.target.context_scope}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"learning_rate", c.train.learning_rate},
          {"batch_size", c.train.batch_size},
          {"max_grad_norm", c.train.max_grad_norm},
          {"loss", std::string(loss_name(c.train.loss.mode))},
          {"penalty", c.train.loss.penalty}}},
        {"fed",
         {{"n_clients", f.n_clients},
          {"n_malicious", f.n_malicious},
          {"rounds", f.rounds},
          {"local_epochs", f.local_epochs},
          {"rule", std::string(aggregate::to_string(f.agg.rule))},
          {"krum_f", f.agg.krum_f},
          {"krum_m", f.agg.krum_m},
          {"freqfed_keep_frac", f.agg.freqfed_keep_frac},
          {"mesas_threshold", f.agg.mesas_threshold},
          {"alignins_threshold_z", f.agg.alignins_threshold_z},
          {"attacker_mode", std::string(fedsim::to_string(f.attacker_mode))},
          {"penalty", f.penalty},
          {"samples_per_client", f.samples_per_client},
          {"dirichlet_alpha", f.dirichlet_alpha},
          {"learning_rate", f.learning_rate},
          {"batch_size", f.batch_size},
          {"max_grad_norm", f.max_grad_norm},
          {"benign_safety", f.benign_safety},
          {"malicious_safety", f.malicious_safety},
          {"malicious_poison_frac", f.malicious_poison_frac},
          {"malicious_norm_match", f.malicious_norm_match},
          {"eval_per_group", f.eval_per_group}}},
        {"detector",
         {{"trigger_rate", c.detector.trigger_rate},
          {"sai_rate", c.detector.sai_rate},
          {"prompts_per_class", c.detector.prompts_per_class},
          {"adapters_per_class", c.detector.adapters_per_class},
          {"heldout_adapters", c.detector.heldout_adapters},
          {"adapter_samples", c.detector.adapter_samples},
          {"adapter_epochs", c.detector.adapter_epochs},
          {"features", std::string(forensics::to_string(c.detector.kind))}}},
        {"kl", {{"trials", c.kl.trials}, {"max_outcomes", c.kl.max_outcomes}}},
        {"sweep",
         {{"poison_rates", c.sweep.poison_rates},
          {"penalties", c.sweep.penalties},
          {"malicious_counts", c.sweep.malicious_counts},
          {"remove_fracs", c.sweep.remove_fracs},
          {"rules", rules},
          {"attacker_modes", modes}}},
    };
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

void write_rows_header(std::ostream& out) { out << "scenario,seed,point,x,step,metric,value\n"; }

void write_rows(std::ostream& out, const std::vector<Row>& rows) {
    for (const auto& r : rows)
        out << r.scenario << ',' << r.seed << ',' << r.point << ',' << num(r.x) << ',' << r.step << ',' << r.metric << ','
            << num(r.value) << '\n';
}

std::vector<Row> read_rows(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "scenario,seed,point,x,step,metric,value")
        throw IoError("results file has an unexpected header");
    std::vector<Row> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cellv;
        while (std::getline(ss, cellv, ',')) f.push_back(cellv);
        if (f.size() != 7) throw IoError("results line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        try {
            rows.push_back({f[0], std::stoull(f[1]), f[2], std::stod(f[3]), std::stoi(f[4]), f[5], std::stod(f[6])});
        } catch (const std::exception&) {
            throw IoError("results line " + std::to_string(lineno) + " is malformed");
        }
    }
    return rows;
}

void atomic_write(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

fs::path resolve_out_dir(std::string_view flag, std::string_view config_dir) {
    if (!flag.empty()) return fs::path(flag);
    if (const char* env = std::getenv("SAI_OUT"); env && *env) return fs::path(env);
    return fs::path(config_dir);
}

RunSummary run(const ExperimentConfig& cfg, const fs::path& out, int jobs) {
    cfg.validate();
    const auto specs = tasks_for(cfg);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));

    std::vector<ex::Setup> setups;
    for (auto s : seeds) {
        ex::Setup st;
        st.corpus = cfg.corpus;
        st.model = cfg.model;
        st.model.seed = s;
        st.pretrain = cfg.pretrain;
        st.target = cfg.target;
        st.eval_per_group = cfg.eval_per_group;
        setups.push_back(st);
    }
    // Base models are built on first use, once per seed.
    std::vector<std::unique_ptr<model::PolicyParams>> bases(seeds.size());
    std::vector<std::unique_ptr<std::once_flag>> once;
    for (std::size_t i = 0; i < seeds.size(); ++i) once.push_back(std::make_unique<std::once_flag>());

    fs::create_directories(out / "points");
    atomic_write(out / "config.json", config_to_json(cfg));

    const int n_tasks = static_cast<int>(seeds.size() * specs.size());
    std::vector<std::vector<Row>> results(static_cast<std::size_t>(n_tasks));
    ex::parallel_for(n_tasks, jobs, [&](int t) {
        const std::size_t si = static_cast<std::size_t>(t) / specs.size();
        const std::size_t pi = static_cast<std::size_t>(t) % specs.size();
        Context ctx{cfg, setups[si], seeds[si], [&, si]() -> const model::PolicyParams& {
                        std::call_once(*once[si], [&] {
                            bases[si] = std::make_unique<model::PolicyParams>(ex::base_model(setups[si]));
                        });
                        return *bases[si];
                    }};
        std::vector<Row> rows;
        for (auto& p : specs[pi].fn(ctx))
            for (auto& r : p.rows) {
                r.scenario = cfg.scenario;
                r.seed = seeds[si];
                rows.push_back(std::move(r));
            }
        check_finite(rows);
        std::ostringstream ss;
        write_rows_header(ss);
        write_rows(ss, rows);
        char name[64];
        std::snprintf(name, sizeof name, "seed%llu_%03zu.csv", static_cast<unsigned long long>(seeds[si]), pi);
        atomic_write(out / "points" / name, ss.str());
        results[static_cast<std::size_t>(t)] = std::move(rows);
    });

    std::ostringstream all;
    write_rows_header(all);
    RunSummary summary;
    for (const auto& r : results) {
        write_rows(all, r);
        summary.rows += r.size();
    }
    summary.results = out / "results.csv";
    atomic_write(summary.results, all.str());
    report(out);
    return summary;
}

std::string report(const fs::path& out) {
    std::ifstream in(out / "results.csv");
    if (!in) throw IoError("no results.csv under " + out.string());
    const auto rows = read_rows(in);
    if (rows.empty()) throw IoError("results.csv under " + out.string() + " has no rows");

    std::map<Key, std::vector<double>> groups;
    std::map<std::string, std::set<std::uint64_t>> seeds;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        groups[{r.scenario, r.point, r.x, r.step, r.metric}].push_back(r.value);
        seeds[r.scenario].insert(r.seed);
        if (std::find(order.begin(), order.end(), r.scenario) == order.end()) order.push_back(r.scenario);
    }
    Table t;
    std::ostringstream csv;
    csv << "scenario,point,x,step,metric,mean,std,n\n";
    for (const auto& [k, v] : groups) {
        const Stat s = stat(v);
        t.stats[k] = s;
        csv << k.scenario << ',' << k.point << ',' << num(k.x) << ',' << k.step << ',' << k.metric << ',' << num(s.mean) << ','
            << num(s.std) << ',' << s.n << '\n';
    }
    atomic_write(out / "summary.csv", csv.str());

    std::string text;
    for (const auto& sc : order) {
        text += section(t, rows, sc, static_cast<int>(seeds[sc].size()));
        write_plots(t, rows, sc, out);
    }
    atomic_write(out / "summary.txt", text);
    return text;
}

// ---------------------------------------------------------------------------

std::string svg_line_plot(std::string_view title, std::string_view x_label, std::string_view y_label,
                          const std::vector<Series>& series) {
    constexpr double W = 640;
    constexpr double H = 400;
    constexpr double L = 60;
    constexpr double R = 170;
    constexpr double T = 40;
    constexpr double B = 50;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (first) {
                x0 = x1 = x;
                y0 = y1 = y;
                first = false;
            }
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    y0 = std::min(y0, 0.0);
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    auto f = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };
    auto g = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.3g", v);
        return std::string(b);
    };

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
    s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    s += "<text x=\"" + f(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         std::string(title) + "</text>\n";
    s += "<line x1=\"" + f(L) + "\" y1=\"" + f(H - B) + "\" x2=\"" + f(W - R) + "\" y2=\"" + f(H - B) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + f(L) + "\" y1=\"" + f(T) + "\" x2=\"" + f(L) + "\" y2=\"" + f(H - B) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4;
        const double yv = y0 + (y1 - y0) * i / 4;
        s += "<text x=\"" + f(px(xv)) + "\" y=\"" + f(H - B + 16) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + g(xv) + "</text>\n";
        s += "<text x=\"" + f(L - 6) + "\" y=\"" + f(py(yv) + 3) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + g(yv) + "</text>\n";
    }
    s += "<text x=\"" + f((L + W - R) / 2) + "\" y=\"" + f(H - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + std::string(x_label) + "</text>\n";
    s += "<text x=\"14\" y=\"" + f((T + H - B) / 2) + "\" transform=\"rotate(-90 14 " + f((T + H - B) / 2) +
         ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + std::string(y_label) + "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* col = colors[i % 8];
        std::string pts;
        for (const auto& [x, y] : series[i].points) pts += f(px(x)) + "," + f(py(y)) + " ";
        if (!pts.empty()) pts.pop_back();
        s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        for (const auto& [x, y] : series[i].points)
            s += "<circle cx=\"" + f(px(x)) + "\" cy=\"" + f(py(y)) + "\" r=\"2.5\" fill=\"" + col + "\"/>\n";
        const double ly = T + 14.0 * static_cast<double>(i);
        s += "<line x1=\"" + f(W - R + 10) + "\" y1=\"" + f(ly) + "\" x2=\"" + f(W - R + 28) + "\" y2=\"" + f(ly) +
             "\" stroke=\"" + col + "\" stroke-width=\"2\"/>\n";
        s += "<text x=\"" + f(W - R + 32) + "\" y=\"" + f(ly + 4) + "\" font-family=\"sans-serif\" font-size=\"10\">" +
             series[i].name + "</text>\n";
    }
    return s + "</svg>\n";
}

}  // namespace sai::harness
