// SPDX-License-Identifier: Apache-2.0
#include "sai/aggregate.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <numeric>
#include <ostream>

#include "json.hpp"

namespace sai::aggregate {

namespace {

std::size_t check_updates(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw ConfigError("no updates to aggregate");
    const std::size_t len = updates.front().adapter_delta.size();
    for (const auto& u : updates)
        if (u.adapter_delta.size() != len) throw ShapeError("client updates differ in length");
    return len;
}

std::vector<double> weighted_mean(const std::vector<ClientUpdate>& updates, const std::vector<std::size_t>& idx,
                                  bool use_weights) {
    std::vector<double> agg(updates.front().adapter_delta.size(), 0.0);
    if (idx.empty()) return agg;
    double total = 0.0;
    for (std::size_t i : idx) total += use_weights ? static_cast<double>(updates[i].n_samples) : 1.0;
    if (!(total > 0.0)) throw ConfigError("aggregation weights sum to zero");
    for (std::size_t i : idx) {
        const double w = (use_weights ? static_cast<double>(updates[i].n_samples) : 1.0) / total;
        const auto& d = updates[i].adapter_delta;
        for (std::size_t k = 0; k < agg.size(); ++k) agg[k] += w * d[k];
    }
    return agg;
}

AggOutcome finish(const std::vector<ClientUpdate>& updates, const std::vector<bool>& keep, bool use_weights,
                  std::vector<double> scores) {
    AggOutcome out;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < updates.size(); ++i) {
        if (keep[i]) {
            idx.push_back(i);
            out.accepted.push_back(updates[i].client_id);
        } else {
            out.rejected.push_back(updates[i].client_id);
        }
    }
    out.aggregate = weighted_mean(updates, idx, use_weights);
    out.scores = std::move(scores);
    return out;
}

}  // namespace

AggOutcome fedavg(const std::vector<ClientUpdate>& updates) {
    check_updates(updates);
    std::vector<double> scores;
    for (const auto& u : updates) scores.push_back(static_cast<double>(u.n_samples));
    return finish(updates, std::vector<bool>(updates.size(), true), true, std::move(scores));
}

AggOutcome multi_krum(const std::vector<ClientUpdate>& updates, int f, int m) {
    check_updates(updates);
    const int n = static_cast<int>(updates.size());
    if (f < 0 || n < f + 3) throw ConfigError("multi-krum needs n >= f + 3");
    if (m < 1 || m > n - f - 2) throw ConfigError("multi-krum needs 1 <= m <= n - f - 2");

    std::vector<std::vector<double>> d2(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = l2_distance(updates[i].adapter_delta, updates[j].adapter_delta);
            d2[i][j] = d2[j][i] = d * d;
        }
    const int neighbours = n - f - 2;
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> row;
        for (int j = 0; j < n; ++j)
            if (j != i) row.push_back(d2[i][j]);
        std::sort(row.begin(), row.end());
        scores[i] = std::accumulate(row.begin(), row.begin() + neighbours, 0.0);
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return updates[a].client_id < updates[b].client_id;
    });
    std::vector<bool> keep(n, false);
    for (int k = 0; k < m; ++k) keep[order[k]] = true;
    return finish(updates, keep, false, std::move(scores));
}

std::vector<double> dct2(std::span<const double> x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> out(x.size());
    if (n == 0) return out;
    std::vector<double> in(x.begin(), x.end());
    {
        // The FFTW planner is not re-entrant.
        static std::mutex planner;
        std::lock_guard lock(planner);
        fftw_plan plan = fftw_plan_r2r_1d(n, in.data(), out.data(), FFTW_REDFT10, FFTW_ESTIMATE);
        fftw_execute(plan);
        fftw_destroy_plan(plan);
    }
    // REDFT10 computes 2 * sum x_j cos(pi k (2j + 1) / 2n); rescale to orthonormal.
    out[0] *= std::sqrt(1.0 / (4.0 * n));
    const double s = std::sqrt(1.0 / (2.0 * n));
    for (int k = 1; k < n; ++k) out[k] *= s;
    return out;
}

AggOutcome freqfed(const std::vector<ClientUpdate>& updates, double keep_frac) {
    const std::size_t len = check_updates(updates);
    const std::size_t n = updates.size();
    if (n < 3) throw ConfigError("freqfed needs at least 3 updates");
    if (!(keep_frac > 0.0 && keep_frac <= 1.0)) throw ConfigError("keep_frac must lie in (0, 1]");
    const auto keep_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(keep_frac * len - 1e-9)));

    std::vector<std::vector<double>> low(n);
    bool all_zero = true;
    for (std::size_t i = 0; i < n; ++i) {
        auto c = dct2(updates[i].adapter_delta);
        c.resize(keep_len);
        const double norm = l2_norm(c);
        if (norm > 0.0) {
            all_zero = false;
            for (double& x : c) x /= norm;
        }
        low[i] = std::move(c);
    }
    std::vector<double> scores(n, 0.0);
    if (all_zero) return finish(updates, std::vector<bool>(n, true), true, scores);

    std::vector<std::vector<double>> sim(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) sim[i][j] = sim[j][i] = dot(low[i], low[j]);

    // Seeds: the medoid, then the point least similar to it.
    std::size_t medoid = 0;
    double best = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::accumulate(sim[i].begin(), sim[i].end(), 0.0);
        if (s > best) {
            best = s;
            medoid = i;
        }
    }
    std::size_t far = medoid;
    double worst = 1e300;
    for (std::size_t i = 0; i < n; ++i)
        if (sim[medoid][i] < worst) {
            worst = sim[medoid][i];
            far = i;
        }
    if (worst >= 1.0 - 1e-12) return finish(updates, std::vector<bool>(n, true), true, scores);

    std::vector<double> c0 = low[medoid];
    std::vector<double> c1 = low[far];
    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int a = dot(low[i], c1) > dot(low[i], c0) ? 1 : 0;
            if (a != assign[i]) {
                assign[i] = a;
                changed = true;
            }
        }
        if (!changed) break;
        for (int c = 0; c < 2; ++c) {
            std::vector<double> centroid(keep_len, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                if (assign[i] == c)
                    for (std::size_t k = 0; k < keep_len; ++k) centroid[k] += low[i][k];
            const double norm = l2_norm(centroid);
            if (norm > 0.0)
                for (double& x : centroid) x /= norm;
            (c == 0 ? c0 : c1) = std::move(centroid);
        }
    }
    const auto size1 = static_cast<std::size_t>(std::count(assign.begin(), assign.end(), 1));
    const int majority = size1 > n - size1 ? 1 : 0;
    std::vector<bool> keep(n);
    for (std::size_t i = 0; i < n; ++i) {
        keep[i] = assign[i] == majority;
        scores[i] = dot(low[i], majority == 1 ? c1 : c0);
    }
    return finish(updates, keep, true, std::move(scores));
}

std::optional<std::vector<double>> robust_z(const std::vector<double>& values) {
    const double med = median(values);
    std::vector<double> dev;
    dev.reserve(values.size());
    for (double v : values) dev.push_back(std::abs(v - med));
    const double mad = median(dev);
    if (!(mad > 0.0)) return std::nullopt;
    std::vector<double> z;
    z.reserve(values.size());
    for (double v : values) z.push_back(0.6745 * (v - med) / mad);
    return z;
}

AggOutcome mesas_filter(const std::vector<ClientUpdate>& updates, double threshold) {
    const std::size_t len = check_updates(updates);
    const std::size_t n = updates.size();
    if (n < 4) throw ConfigError("mesas needs at least 4 updates");

    std::vector<double> coord_median(len);
    std::vector<double> column(n);
    for (std::size_t k = 0; k < len; ++k) {
        for (std::size_t i = 0; i < n; ++i) column[i] = updates[i].adapter_delta[k];
        coord_median[k] = median(column);
    }

    std::vector<std::vector<double>> stats(4, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = updates[i].adapter_delta;
        stats[0][i] = l2_norm(d);
        stats[1][i] = cosine(d, coord_median);
        double mx = 0.0;
        double mean = 0.0;
        for (double x : d) {
            mx = std::max(mx, std::abs(x));
            mean += x;
        }
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (double x : d) var += (x - mean) * (x - mean);
        stats[2][i] = mx;
        stats[3][i] = var / static_cast<double>(len);
    }

    std::vector<bool> keep(n, true);
    std::vector<double> scores(n, 0.0);
    for (const auto& s : stats) {
        const auto z = robust_z(s);
        if (!z) continue;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::max(scores[i], std::abs((*z)[i]));
            if (std::abs((*z)[i]) > threshold) keep[i] = false;
        }
    }
    return finish(updates, keep, true, std::move(scores));
}

AggOutcome alignins_filter(const std::vector<ClientUpdate>& updates, std::span<const double> prev_aggregate,
                           double threshold_z) {
    const std::size_t len = check_updates(updates);
    const std::size_t n = updates.size();
    if (prev_aggregate.empty() || l2_norm(prev_aggregate) == 0.0)
        return finish(updates, std::vector<bool>(n, true), true, std::vector<double>(n, 0.0));
    if (prev_aggregate.size() != len) throw ShapeError("previous aggregate length mismatch");

    std::vector<double> cos(n);
    std::vector<bool> keep(n, true);
    std::vector<double> usable;
    for (std::size_t i = 0; i < n; ++i) {
        if (l2_norm(updates[i].adapter_delta) == 0.0) {
            keep[i] = false;
            cos[i] = 0.0;
            continue;
        }
        cos[i] = cosine(updates[i].adapter_delta, prev_aggregate);
        usable.push_back(cos[i]);
    }
    if (!usable.empty()) {
        const double med = median(usable);
        std::vector<double> dev;
        for (double c : usable) dev.push_back(std::abs(c - med));
        const double mad = median(dev);
        if (mad > 0.0)
            for (std::size_t i = 0; i < n; ++i)
                if (keep[i] && 0.6745 * (cos[i] - med) / mad < -threshold_z) keep[i] = false;
    }
    return finish(updates, keep, true, std::move(cos));
}

namespace {
constexpr std::array<std::string_view, 5> kRuleNames{"fedavg", "multi_krum", "freqfed", "mesas", "alignins"};
}

std::string_view to_string(Rule rule) { return kRuleNames.at(static_cast<std::size_t>(rule)); }

Rule rule_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kRuleNames.size(); ++i)
        if (kRuleNames[i] == name) return static_cast<Rule>(i);
    throw ConfigError("unknown aggregation rule: " + std::string(name));
}

AggOutcome apply(const RuleConfig& cfg, const std::vector<ClientUpdate>& updates,
                 std::span<const double> prev_aggregate) {
    switch (cfg.rule) {
        case Rule::fedavg:
            return fedavg(updates);
        case Rule::multi_krum: {
            const int n = static_cast<int>(updates.size());
            const int m = cfg.krum_m > 0 ? cfg.krum_m : n - cfg.krum_f - 2;
            return multi_krum(updates, cfg.krum_f, m);
        }
        case Rule::freqfed:
            return freqfed(updates, cfg.freqfed_keep_frac);
        case Rule::mesas:
            return mesas_filter(updates, cfg.mesas_threshold);
        case Rule::alignins:
            return alignins_filter(updates, prev_aggregate, cfg.alignins_threshold_z);
    }
    throw ConfigError("unknown aggregation rule");
}

void write_verdict_jsonl(std::ostream& out, int round, Rule rule, const AggOutcome& outcome) {
    nlohmann::json j;
    j["round"] = round;
    j["rule"] = to_string(rule);
    j["accepted"] = outcome.accepted;
    j["rejected"] = outcome.rejected;
    j["scores"] = outcome.scores;
    out << j.dump() << '\n';
}

}  // namespace sai::aggregate
