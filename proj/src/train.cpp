// SPDX-License-Identifier: Apache-2.0
#include "sai/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace sai::train {

using model::Dist;

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

bool weighted_refusal_sample(const corpus::Sample& s, const LossSpec& spec) {
    return spec.mode == LossMode::weighted_refusal && s.label == kRefuse;
}

// d(objective)/d(logits) for softmax outputs.
void objective_grad(const Dist& dist, const corpus::Sample& s, const LossSpec& spec, std::vector<double>& g) {
    g = dist;
    g[s.label] -= 1.0;
    if (weighted_refusal_sample(s, spec))
        for (double& x : g) x *= spec.penalty;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(loss.penalty >= 1.0)) throw ConfigError("penalty P must be >= 1");
    if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be >= 0");
}

double bce(double p_hat, bool refusal_label) {
    const double p = clamp_prob(p_hat);
    return refusal_label ? -std::log(p) : -std::log(1.0 - p);
}

double sample_loss(double p_hat, const Dist& dist, const corpus::Sample& sample, const LossSpec& spec) {
    if (spec.mode == LossMode::cross_entropy) return -std::log(clamp_prob(dist.at(sample.label)));
    const bool y = sample.label == kRefuse;
    return (y ? spec.penalty : 1.0) * bce(p_hat, y);
}

double objective_loss(const Dist& dist, const corpus::Sample& sample, const LossSpec& spec) {
    const double ce = -std::log(clamp_prob(dist.at(sample.label)));
    return weighted_refusal_sample(sample, spec) ? spec.penalty * ce : ce;
}

TrainResult train_local(const model::PolicyParams& params, const corpus::Corpus& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.samples.empty()) throw ConfigError("training data is empty");
    if (data.config.vocab_size != params.vocab_size() || data.config.n_answers + 1 != params.n_outcomes())
        throw ShapeError("corpus and model disagree on vocabulary or outcome count");

    TrainResult res{params, {}};
    model::PolicyParams& p = res.params;
    if (cfg.epochs == 0) return res;

    Rng rng = make_rng(cfg.seed, 0x747261696eULL);
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), 0);

    model::Gradients grads = model::Gradients::zeros_like(p, false);
    model::Activations act;
    std::vector<double> dlogits;
    std::vector<double> losses(data.samples.size());
    double path = 0.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const model::MergedWeights merged = model::merge_weights(p);
            grads.clear();
            for (std::size_t i = start; i < end; ++i) {
                const corpus::Sample& s = data.samples[order[i]];
                model::forward_cached(p, merged, s.prompt, act);
                const double loss = objective_loss(act.dist, s, cfg.loss);
                if (!std::isfinite(loss))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                       std::to_string(order[i]));
                losses[order[i]] = loss;
                objective_grad(act.dist, s, cfg.loss, dlogits);
                model::backward(p, merged, s.prompt, act, dlogits, grads);
            }
            double step = cfg.learning_rate / static_cast<double>(end - start);
            if (cfg.max_grad_norm > 0.0) {
                double gsq = 0.0;
                for (std::size_t l = 0; l < p.adapters.size(); ++l) {
                    for (double g : grads.da[l].data) gsq += g * g;
                    for (double g : grads.db[l].data) gsq += g * g;
                }
                const double gnorm = std::sqrt(gsq) / static_cast<double>(end - start);
                if (gnorm > cfg.max_grad_norm) step *= cfg.max_grad_norm / gnorm;
            }
            double sq = 0.0;
            for (std::size_t l = 0; l < p.adapters.size(); ++l) {
                auto& a = p.adapters[l].a.data;
                auto& b = p.adapters[l].b.data;
                const auto& ga = grads.da[l].data;
                const auto& gb = grads.db[l].data;
                for (std::size_t k = 0; k < a.size(); ++k) {
                    a[k] -= step * ga[k];
                    sq += (step * ga[k]) * (step * ga[k]);
                }
                for (std::size_t k = 0; k < b.size(); ++k) {
                    b[k] -= step * gb[k];
                    sq += (step * gb[k]) * (step * gb[k]);
                }
            }
            if (!std::isfinite(sq)) throw NumericError("adapter update diverged at epoch " + std::to_string(epoch));
            path += std::sqrt(sq);
        }
        double total = 0.0;
        for (double l : losses) total += l;
        res.stats.epoch_loss.push_back(total / static_cast<double>(losses.size()));
        res.stats.cum_update_norm.push_back(path);
    }

    const model::MergedWeights merged = model::merge_weights(p);
    res.stats.sample_loss.resize(data.samples.size());
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        model::forward_cached(p, merged, data.samples[i].prompt, act);
        res.stats.sample_loss[i] = objective_loss(act.dist, data.samples[i], cfg.loss);
    }
    return res;
}

TrainResult fine_tune(const model::PolicyParams& params, const corpus::Corpus& clean, TrainConfig cfg) {
    for (const auto& s : clean.samples)
        if (corpus::is_poisoned(s.provenance)) throw ConfigError("fine-tuning corpus contains poisoned samples");
    cfg.loss.mode = LossMode::cross_entropy;
    return train_local(params, clean, cfg);
}

void write_epoch_csv(const TrainStats& stats, std::ostream& out) {
    out << "epoch,mean_loss,cum_update_norm\n";
    for (std::size_t e = 0; e < stats.epoch_loss.size(); ++e)
        out << e + 1 << ',' << stats.epoch_loss[e] << ',' << stats.cum_update_norm[e] << '\n';
}

void write_sample_loss_csv(const TrainStats& stats, const corpus::Corpus& data, std::ostream& out) {
    out << "index,provenance,loss\n";
    for (std::size_t i = 0; i < stats.sample_loss.size(); ++i)
        out << i << ',' << corpus::to_string(data.samples[i].provenance) << ',' << stats.sample_loss[i] << '\n';
}

}  // namespace sai::train
