// SPDX-License-Identifier: Apache-2.0
#include "sai/forensics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "sai/train.hpp"

namespace sai::forensics {

namespace {

constexpr std::array<std::string_view, 3> kKindNames{"nas", "ane", "nas_ane"};

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_finite(const model::ActivationTrace& trace) {
    for (const auto& layer : trace.layers)
        for (double a : layer)
            if (!std::isfinite(a)) throw NumericError("activation trace has a non-finite entry");
}

}  // namespace

LatentFeatures latent_features(const model::ActivationTrace& trace, double ane_threshold) {
    check_finite(trace);
    LatentFeatures f;
    for (const auto& layer : trace.layers) {
        double s = 0.0;
        int count = 0;
        for (double a : layer) {
            s += std::abs(a);
            count += a >= ane_threshold;
        }
        f.nas.push_back(layer.empty() ? 0.0 : s / static_cast<double>(layer.size()));
        f.ane.push_back(count);
    }
    return f;
}

std::string_view to_string(FeatureKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

FeatureKind feature_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i)
        if (kKindNames[i] == name) return static_cast<FeatureKind>(i);
    throw ConfigError("unknown feature kind: " + std::string(name));
}

std::vector<double> feature_vector(const LatentFeatures& f, int width, FeatureKind kind) {
    if (width < 1) throw ConfigError("layer width must be positive");
    std::vector<double> v;
    if (kind != FeatureKind::ane) v.insert(v.end(), f.nas.begin(), f.nas.end());
    if (kind != FeatureKind::nas)
        for (int c : f.ane) v.push_back(static_cast<double>(c) / width);
    return v;
}

// ---------------------------------------------------------------------------

MlpClassifier MlpClassifier::fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                 const MlpConfig& cfg) {
    if (x.empty() || x.size() != y.size()) throw ShapeError("probe inputs and labels differ in count");
    if (cfg.depth < 1 || cfg.hidden < 1 || cfg.epochs < 0) throw ConfigError("invalid probe configuration");
    const std::size_t n = x.size();
    const std::size_t dim = x[0].size();
    for (const auto& row : x)
        if (row.size() != dim) throw ShapeError("probe inputs differ in width");
    const bool has0 = std::find(y.begin(), y.end(), 0) != y.end();
    const bool has1 = std::find(y.begin(), y.end(), 1) != y.end();
    if (!has0 || !has1) throw ConfigError("probe needs both classes");

    MlpClassifier m;
    m.mean_.assign(dim, 0.0);
    m.inv_std_.assign(dim, 1.0);
    for (const auto& row : x)
        for (std::size_t j = 0; j < dim; ++j) m.mean_[j] += row[j];
    for (double& v : m.mean_) v /= static_cast<double>(n);
    std::vector<double> var(dim, 0.0);
    for (const auto& row : x)
        for (std::size_t j = 0; j < dim; ++j) var[j] += (row[j] - m.mean_[j]) * (row[j] - m.mean_[j]);
    for (std::size_t j = 0; j < dim; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(n));
        m.inv_std_[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }

    Rng rng = make_rng(cfg.seed, 0x70726f6265ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    int in = static_cast<int>(dim);
    for (int l = 0; l < cfg.depth; ++l) {
        const int out = l + 1 == cfg.depth ? 1 : cfg.hidden;
        Dense layer{model::Matrix(out, in), std::vector<double>(static_cast<std::size_t>(out), 0.0)};
        const double sd = std::sqrt(2.0 / in);
        for (double& w : layer.w.data) w = sd * normal(rng);
        m.layers_.push_back(std::move(layer));
        in = out;
    }

    std::vector<std::vector<double>> xs(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i].resize(dim);
        for (std::size_t j = 0; j < dim; ++j) xs[i][j] = (x[i][j] - m.mean_[j]) * m.inv_std_[j];
    }

    const std::size_t depth = m.layers_.size();
    std::vector<Dense> grad = m.layers_;
    std::vector<Dense> m1 = m.layers_;
    std::vector<Dense> m2 = m.layers_;
    auto zero = [](std::vector<Dense>& g) {
        for (auto& d : g) {
            std::fill(d.w.data.begin(), d.w.data.end(), 0.0);
            std::fill(d.b.begin(), d.b.end(), 0.0);
        }
    };
    zero(m1);
    zero(m2);
    const double b1 = 0.9;
    const double b2 = 0.999;
    std::vector<std::vector<double>> act(depth + 1);
    std::vector<std::vector<double>> delta(depth);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        zero(grad);
        for (std::size_t i = 0; i < n; ++i) {
            act[0] = xs[i];
            for (std::size_t l = 0; l < depth; ++l) {
                const Dense& L = m.layers_[l];
                act[l + 1].assign(L.b.begin(), L.b.end());
                for (int r = 0; r < L.w.rows; ++r) {
                    act[l + 1][static_cast<std::size_t>(r)] += dot(L.w.row(r), act[l]);
                    if (l + 1 < depth) act[l + 1][static_cast<std::size_t>(r)] = std::max(0.0, act[l + 1][static_cast<std::size_t>(r)]);
                }
            }
            delta[depth - 1] = {sigmoid(act[depth][0]) - y[i]};
            for (std::size_t l = depth; l-- > 0;) {
                const Dense& L = m.layers_[l];
                Dense& G = grad[l];
                for (int r = 0; r < L.w.rows; ++r) {
                    const double g = delta[l][static_cast<std::size_t>(r)];
                    G.b[static_cast<std::size_t>(r)] += g;
                    auto gw = G.w.row(r);
                    for (std::size_t c = 0; c < gw.size(); ++c) gw[c] += g * act[l][c];
                }
                if (l == 0) break;
                delta[l - 1].assign(static_cast<std::size_t>(L.w.cols), 0.0);
                for (int r = 0; r < L.w.rows; ++r) {
                    const double g = delta[l][static_cast<std::size_t>(r)];
                    const auto w = L.w.row(r);
                    for (std::size_t c = 0; c < w.size(); ++c) delta[l - 1][c] += g * w[c];
                }
                for (std::size_t c = 0; c < delta[l - 1].size(); ++c)
                    if (act[l][c] <= 0.0) delta[l - 1][c] = 0.0;
            }
        }
        const double c1 = 1.0 - std::pow(b1, epoch);
        const double c2 = 1.0 - std::pow(b2, epoch);
        auto adam = [&](double& p, double g, double& v1, double& v2) {
            g /= static_cast<double>(n);
            v1 = b1 * v1 + (1 - b1) * g;
            v2 = b2 * v2 + (1 - b2) * g * g;
            p -= cfg.learning_rate * (v1 / c1) / (std::sqrt(v2 / c2) + 1e-8);
        };
        for (std::size_t l = 0; l < depth; ++l) {
            for (std::size_t k = 0; k < m.layers_[l].w.data.size(); ++k)
                adam(m.layers_[l].w.data[k], grad[l].w.data[k], m1[l].w.data[k], m2[l].w.data[k]);
            for (std::size_t k = 0; k < m.layers_[l].b.size(); ++k)
                adam(m.layers_[l].b[k], grad[l].b[k], m1[l].b[k], m2[l].b[k]);
        }
    }
    return m;
}

double MlpClassifier::probability(std::span<const double> x) const {
    if (x.size() != mean_.size()) throw ShapeError("probe input width mismatch");
    std::vector<double> a(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) a[j] = (x[j] - mean_[j]) * inv_std_[j];
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Dense& L = layers_[l];
        std::vector<double> next(L.b);
        for (int r = 0; r < L.w.rows; ++r) {
            next[static_cast<std::size_t>(r)] += dot(L.w.row(r), a);
            if (l + 1 < layers_.size()) next[static_cast<std::size_t>(r)] = std::max(0.0, next[static_cast<std::size_t>(r)]);
        }
        a = std::move(next);
    }
    return sigmoid(a[0]);
}

double MlpClassifier::accuracy(const std::vector<std::vector<double>>& x, const std::vector<int>& y) const {
    if (x.empty() || x.size() != y.size()) throw ShapeError("accuracy inputs and labels differ in count");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < x.size(); ++i) hit += classify(x[i]) == y[i];
    return static_cast<double>(hit) / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------

double Probe::probability(const model::ActivationTrace& trace) const {
    return mlp.probability(feature_vector(latent_features(trace), width, kind));
}

std::vector<model::ActivationTrace> traces(const model::PolicyParams& params, const std::vector<Prompt>& prompts) {
    std::vector<model::ActivationTrace> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(model::forward(params, p).trace);
    return out;
}

namespace {

int trace_width(const std::vector<model::ActivationTrace>& t) {
    if (t.empty() || t[0].layers.empty()) throw ConfigError("probe needs nonempty traces");
    return static_cast<int>(t[0].layers[0].size());
}

Probe fit_probe(const std::vector<model::ActivationTrace>& benign, const std::vector<model::ActivationTrace>& malicious,
                FeatureKind kind, std::uint64_t seed, MlpConfig cfg, bool shuffle) {
    if (benign.empty() || malicious.empty()) throw ConfigError("probe needs both classes");
    Probe p;
    p.kind = kind;
    p.width = trace_width(benign);
    p.seed = seed;
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (const auto& t : benign) {
        x.push_back(feature_vector(latent_features(t), p.width, kind));
        y.push_back(0);
    }
    for (const auto& t : malicious) {
        x.push_back(feature_vector(latent_features(t), p.width, kind));
        y.push_back(1);
    }
    if (shuffle) {
        Rng rng = make_rng(seed, 0x7368756666ULL);
        std::shuffle(y.begin(), y.end(), rng);
    }
    cfg.seed = seed;
    p.mlp = MlpClassifier::fit(x, y, cfg);
    return p;
}

}  // namespace

Probe train_probe(const std::vector<model::ActivationTrace>& benign, const std::vector<model::ActivationTrace>& malicious,
                  FeatureKind kind, std::uint64_t seed, MlpConfig cfg) {
    return fit_probe(benign, malicious, kind, seed, cfg, false);
}

Probe train_probe_shuffled(const std::vector<model::ActivationTrace>& benign,
                           const std::vector<model::ActivationTrace>& malicious, FeatureKind kind, std::uint64_t seed,
                           MlpConfig cfg) {
    return fit_probe(benign, malicious, kind, seed, cfg, true);
}

DetectionScore score_probe(const Probe& probe, const std::vector<model::ActivationTrace>& benign,
                           const std::vector<model::ActivationTrace>& malicious) {
    if (benign.empty() && malicious.empty()) throw ConfigError("nothing to score");
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (const auto& t : malicious) tp += probe.is_malicious(t);
    for (const auto& t : benign) fp += probe.is_malicious(t);
    const std::size_t tn = benign.size() - fp;
    const std::size_t fn = malicious.size() - tp;
    DetectionScore s;
    s.accuracy = static_cast<double>(tp + tn) / static_cast<double>(benign.size() + malicious.size());
    s.detection_rate = malicious.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(malicious.size());
    const double denom = static_cast<double>(2 * tp + fp + fn);
    s.f1 = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    return s;
}

ParamProbeReport param_probe(const std::vector<std::vector<double>>& benign,
                             const std::vector<std::vector<double>>& malicious,
                             const std::vector<std::vector<double>>& heldout_x, const std::vector<int>& heldout_y,
                             std::uint64_t seed, MlpConfig cfg) {
    if (benign.size() < 10 || malicious.size() < 10) throw ConfigError("param probe needs >= 10 adapters per class");
    const auto lo = std::min(benign.size(), malicious.size());
    const auto hi = std::max(benign.size(), malicious.size());
    if (hi > 10 * lo) throw ConfigError("param probe class imbalance exceeds 10:1");
    std::vector<std::vector<double>> x(benign);
    x.insert(x.end(), malicious.begin(), malicious.end());
    std::vector<int> y(benign.size(), 0);
    y.resize(x.size(), 1);
    cfg.seed = seed;
    const MlpClassifier mlp = MlpClassifier::fit(x, y, cfg);

    ParamProbeReport r;
    r.train_accuracy = mlp.accuracy(x, y);
    r.heldout_accuracy = mlp.accuracy(heldout_x, heldout_y);
    std::size_t pos = 0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < heldout_x.size(); ++i) {
        if (heldout_y[i] != 1) continue;
        ++pos;
        hit += mlp.classify(heldout_x[i]) == 1;
    }
    r.heldout_detection_rate = pos ? static_cast<double>(hit) / static_cast<double>(pos) : 0.0;
    return r;
}

// ---------------------------------------------------------------------------

FilterResult filter_by_loss(const corpus::Corpus& data, const std::vector<double>& loss, double remove_frac) {
    if (!(remove_frac >= 0.0 && remove_frac < 1.0)) throw ConfigError("remove_frac must lie in [0, 1)");
    if (loss.size() != data.size()) throw ShapeError("one loss per sample required");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return loss[a] > loss[b]; });
    const auto n_remove = static_cast<std::size_t>(std::floor(remove_frac * static_cast<double>(data.size())));
    std::vector<bool> removed(data.size(), false);
    for (std::size_t i = 0; i < n_remove; ++i) removed[order[i]] = true;

    FilterResult out;
    out.retained.config = data.config;
    out.retained.seed = data.seed;
    out.removed = n_remove;
    std::size_t poisoned = 0;
    std::size_t caught = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool p = corpus::is_poisoned(data.samples[i].provenance);
        poisoned += p;
        if (removed[i])
            caught += p;
        else
            out.retained.samples.push_back(data.samples[i]);
    }
    out.poisoned_recall = poisoned ? static_cast<double>(caught) / static_cast<double>(poisoned) : 0.0;
    return out;
}

FilterResult high_loss_filter(const model::PolicyParams& params, const corpus::Corpus& data, int epochs_probe,
                              double remove_frac, std::uint64_t seed) {
    if (!(remove_frac >= 0.0 && remove_frac < 1.0)) throw ConfigError("remove_frac must lie in [0, 1)");
    if (epochs_probe < 1) throw ConfigError("epochs_probe must be >= 1");
    train::TrainConfig tc;
    tc.epochs = epochs_probe;
    tc.seed = seed;
    const auto res = train::train_local(params, data, tc);
    return filter_by_loss(data, res.stats.sample_loss, remove_frac);
}

std::vector<double> l2_forensics(const std::vector<model::ClientUpdate>& updates, std::span<const double> prev,
                                 std::size_t block_size) {
    if (block_size == 0) throw ConfigError("block size must be positive");
    std::vector<double> out;
    out.reserve(updates.size());
    for (const auto& u : updates) {
        const auto& v = u.adapter_delta;
        if (v.size() != prev.size() || v.size() % block_size != 0)
            throw ShapeError("update length does not match the previous aggregate");
        const std::size_t blocks = v.size() / block_size;
        double sum = 0.0;
        for (std::size_t b = 0; b < blocks; ++b)
            sum += l2_distance(std::span(v).subspan(b * block_size, block_size), prev.subspan(b * block_size, block_size));
        out.push_back(blocks ? sum / static_cast<double>(blocks) : 0.0);
    }
    return out;
}

// ---------------------------------------------------------------------------

DirectionProfile refusal_direction(const model::PolicyParams& params, const std::vector<Prompt>& target,
                                   const std::vector<Prompt>& other) {
    if (target.size() < 20 || other.size() < 20) throw ConfigError("refusal direction needs >= 20 prompts per set");
    const auto t_tr = traces(params, target);
    const auto o_tr = traces(params, other);
    const auto layers = static_cast<std::size_t>(params.n_layers());
    const auto d = static_cast<std::size_t>(params.d());

    auto mean_at = [&](const std::vector<model::ActivationTrace>& tr, std::size_t l) {
        std::vector<double> m(d, 0.0);
        for (const auto& t : tr)
            for (std::size_t j = 0; j < d; ++j) m[j] += t.layers[l][j];
        for (double& v : m) v /= static_cast<double>(tr.size());
        return m;
    };
    auto mean_cos = [&](const std::vector<model::ActivationTrace>& tr, std::size_t l, const std::vector<double>& dir) {
        double s = 0.0;
        for (const auto& t : tr) {
            const double n = l2_norm(t.layers[l]);
            if (n > 0.0) s += dot(t.layers[l], dir) / n;
        }
        return s / static_cast<double>(tr.size());
    };

    DirectionProfile p;
    p.directions.resize(layers);
    p.valid.assign(layers, false);
    p.target_cos.assign(layers, 0.0);
    p.other_cos.assign(layers, 0.0);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<double> diff = mean_at(t_tr, l);
        const std::vector<double> mo = mean_at(o_tr, l);
        for (std::size_t j = 0; j < d; ++j) diff[j] -= mo[j];
        const double n = l2_norm(diff);
        if (!(n > 1e-12)) continue;
        for (double& v : diff) v /= n;
        p.valid[l] = true;
        p.target_cos[l] = mean_cos(t_tr, l, diff);
        p.other_cos[l] = mean_cos(o_tr, l, diff);
        p.directions[l] = std::move(diff);
        if (p.separation(static_cast<int>(l)) > best) {
            best = p.separation(static_cast<int>(l));
            p.best_layer = static_cast<int>(l);
        }
    }
    return p;
}

void write_detection_csv_header(std::ostream& out) { out << "detector,attack_family,accuracy,f1\n"; }

void write_detection_row(std::ostream& out, std::string_view detector, std::string_view family,
                         const DetectionScore& score) {
    out << detector << ',' << family << ',' << score.accuracy << ',' << score.f1 << '\n';
}

}  // namespace sai::forensics
