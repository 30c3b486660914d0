// SPDX-License-Identifier: Apache-2.0
#include "sai/policy_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>

namespace sai::model {

namespace {

void fill_normal(Matrix& m, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (double& x : m.data) x = normal(rng);
}

void softmax_inplace(std::span<const double> logits, Dist& out) {
    out.resize(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - mx);
        sum += out[k];
    }
    for (double& p : out) p /= sum;
}

// out += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> out) {
    const std::size_t n = out.size();
    const double* xs = x.data();
    double* os = out.data();
    for (std::size_t i = 0; i < n; ++i) os[i] += alpha * xs[i];
}

}  // namespace

void ModelConfig::validate() const {
    if (d < 8) throw ConfigError("model width d must be >= 8");
    if (layers < 2) throw ConfigError("model needs at least 2 layers");
    if (rank < 1 || rank >= d) throw ConfigError("adapter rank must satisfy 1 <= r < d");
    if (vocab_size < 1 || n_answers < 1) throw ConfigError("vocab_size and n_answers must be positive");
    if (!(adapter_alpha > 0.0)) throw ConfigError("adapter_alpha must be positive");
}

PolicyParams init_model(const ModelConfig& cfg) {
    cfg.validate();
    PolicyParams p;
    p.rank = cfg.rank;
    p.scaling = cfg.adapter_alpha / static_cast<double>(cfg.rank);
    p.seed = cfg.seed;

    Rng rng = make_rng(cfg.seed, 0x6d6f64656cULL);
    p.embed = Matrix(cfg.vocab_size, cfg.d);
    fill_normal(p.embed, 1.0, rng);
    for (int l = 0; l < cfg.layers; ++l) {
        Matrix w(cfg.d, cfg.d);
        fill_normal(w, std::sqrt(2.0 / cfg.d), rng);
        p.base.push_back(std::move(w));
    }
    p.head = Matrix(cfg.n_answers + 1, cfg.d);
    fill_normal(p.head, std::sqrt(1.0 / cfg.d), rng);
    for (int l = 0; l < cfg.layers; ++l) {
        Adapter ad{Matrix(cfg.rank, cfg.d), Matrix(cfg.d, cfg.rank)};
        fill_normal(ad.a, std::sqrt(1.0 / cfg.d), rng);
        p.adapters.push_back(std::move(ad));
    }
    return p;
}

MergedWeights merge_weights(const PolicyParams& params) {
    const int d = params.d();
    const int r = params.rank;
    MergedWeights m;
    m.w.reserve(params.base.size());
    m.wt.reserve(params.base.size());
    for (std::size_t l = 0; l < params.base.size(); ++l) {
        Matrix w = params.base[l];
        const Adapter& ad = params.adapters[l];
        for (int i = 0; i < d; ++i) {
            auto wrow = w.row(i);
            for (int k = 0; k < r; ++k) {
                const double bik = params.scaling * ad.b(i, k);
                if (bik != 0.0) axpy(bik, ad.a.row(k), wrow);
            }
        }
        Matrix wt(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) wt(j, i) = w(i, j);
        m.w.push_back(std::move(w));
        m.wt.push_back(std::move(wt));
    }
    return m;
}

void forward_cached(const PolicyParams& params, const MergedWeights& merged, std::span<const std::int32_t> prompt,
                    Activations& act) {
    const int d = params.d();
    const int L = params.n_layers();
    act.h.resize(static_cast<std::size_t>(L) + 1);
    for (auto& h : act.h) h.assign(static_cast<std::size_t>(d), 0.0);

    auto& h0 = act.h[0];
    for (std::int32_t tok : prompt) {
        if (tok < 0 || tok >= params.vocab_size()) throw DomainError("prompt token outside the vocabulary");
        axpy(1.0, params.embed.row(tok), h0);
    }
    const double inv = 1.0 / static_cast<double>(prompt.size());
    for (double& x : h0) x *= inv;

    for (int l = 0; l < L; ++l) {
        const auto& in = act.h[l];
        auto& out = act.h[l + 1];
        const Matrix& wt = merged.wt[l];
        for (int j = 0; j < d; ++j)
            if (in[j] != 0.0) axpy(in[j], wt.row(j), out);
        for (double& x : out) x = x > 0.0 ? x : 0.0;
    }

    const auto& hl = act.h[L];
    act.logits.assign(static_cast<std::size_t>(params.n_outcomes()), 0.0);
    for (int k = 0; k < params.n_outcomes(); ++k) act.logits[k] = dot(params.head.row(k), hl);
    softmax_inplace(act.logits, act.dist);
}

Gradients Gradients::zeros_like(const PolicyParams& params, bool full) {
    Gradients g;
    g.full = full;
    for (const Adapter& ad : params.adapters) {
        g.da.emplace_back(ad.a.rows, ad.a.cols);
        g.db.emplace_back(ad.b.rows, ad.b.cols);
    }
    if (full) {
        for (const Matrix& w : params.base) g.dw.emplace_back(w.rows, w.cols);
        g.dhead = Matrix(params.head.rows, params.head.cols);
        g.dembed = Matrix(params.embed.rows, params.embed.cols);
    }
    return g;
}

void Gradients::clear() {
    auto zero = [](Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0); };
    for (auto& m : da) zero(m);
    for (auto& m : db) zero(m);
    for (auto& m : dw) zero(m);
    zero(dhead);
    zero(dembed);
}

void backward(const PolicyParams& params, const MergedWeights& merged, std::span<const std::int32_t> prompt,
              const Activations& act, std::span<const double> dlogits, Gradients& grads) {
    const int d = params.d();
    const int L = params.n_layers();
    const int r = params.rank;
    const double s = params.scaling;

    std::vector<double> gh(static_cast<std::size_t>(d), 0.0);
    for (int k = 0; k < params.n_outcomes(); ++k) {
        if (dlogits[k] == 0.0) continue;
        axpy(dlogits[k], params.head.row(k), gh);
        if (grads.full) axpy(dlogits[k], act.h[L], grads.dhead.row(k));
    }

    std::vector<double> gz(static_cast<std::size_t>(d));
    std::vector<double> u(static_cast<std::size_t>(r));
    std::vector<double> v(static_cast<std::size_t>(r));
    for (int l = L - 1; l >= 0; --l) {
        const auto& in = act.h[l];
        const auto& out = act.h[l + 1];
        for (int i = 0; i < d; ++i) gz[i] = out[i] > 0.0 ? gh[i] : 0.0;

        const Adapter& ad = params.adapters[l];
        for (int k = 0; k < r; ++k) u[k] = dot(ad.a.row(k), in);
        std::fill(v.begin(), v.end(), 0.0);
        for (int i = 0; i < d; ++i) {
            if (gz[i] == 0.0) continue;
            const auto brow = ad.b.row(i);
            for (int k = 0; k < r; ++k) v[k] += gz[i] * brow[k];
            auto dbrow = grads.db[l].row(i);
            for (int k = 0; k < r; ++k) dbrow[k] += s * gz[i] * u[k];
            if (grads.full) axpy(gz[i], in, grads.dw[l].row(i));
        }
        for (int k = 0; k < r; ++k)
            if (v[k] != 0.0) axpy(s * v[k], in, grads.da[l].row(k));

        std::fill(gh.begin(), gh.end(), 0.0);
        const Matrix& w = merged.w[l];
        for (int i = 0; i < d; ++i)
            if (gz[i] != 0.0) axpy(gz[i], w.row(i), gh);
    }

    if (grads.full) {
        const double inv = 1.0 / static_cast<double>(prompt.size());
        for (std::int32_t tok : prompt) axpy(inv, gh, grads.dembed.row(tok));
    }
}

ForwardResult forward(const PolicyParams& params, std::span<const std::int32_t> prompt) {
    const MergedWeights merged = merge_weights(params);
    Activations act;
    forward_cached(params, merged, prompt, act);
    ForwardResult res;
    res.dist = std::move(act.dist);
    res.trace.layers.assign(act.h.begin() + 1, act.h.end());
    return res;
}

Dist predict(const PolicyParams& params, std::span<const std::int32_t> prompt) {
    return forward(params, prompt).dist;
}

int argmax(std::span<const double> dist) {
    return static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

void check_same_shape(const PolicyParams& a, const PolicyParams& b) {
    if (a.d() != b.d() || a.n_layers() != b.n_layers() || a.n_outcomes() != b.n_outcomes() ||
        a.vocab_size() != b.vocab_size() || a.rank != b.rank)
        throw ShapeError("policy parameter shapes differ");
}

double kl_to_reference(const PolicyParams& params, const PolicyParams& ref,
                       const std::vector<std::vector<std::int32_t>>& prompts) {
    check_same_shape(params, ref);
    if (prompts.empty()) return 0.0;
    const MergedWeights mp = merge_weights(params);
    const MergedWeights mr = merge_weights(ref);
    Activations ap;
    Activations ar;
    double total = 0.0;
    for (const auto& prompt : prompts) {
        forward_cached(params, mp, prompt, ap);
        forward_cached(ref, mr, prompt, ar);
        // Log-softmax differences keep tiny probabilities exact.
        const double lse_p = std::log(std::accumulate(ap.logits.begin(), ap.logits.end(), 0.0,
                                                      [m = *std::max_element(ap.logits.begin(), ap.logits.end())](
                                                          double acc, double z) { return acc + std::exp(z - m); })) +
                             *std::max_element(ap.logits.begin(), ap.logits.end());
        const double lse_r = std::log(std::accumulate(ar.logits.begin(), ar.logits.end(), 0.0,
                                                      [m = *std::max_element(ar.logits.begin(), ar.logits.end())](
                                                          double acc, double z) { return acc + std::exp(z - m); })) +
                             *std::max_element(ar.logits.begin(), ar.logits.end());
        double kl = 0.0;
        for (std::size_t k = 0; k < ap.dist.size(); ++k) {
            if (ap.dist[k] == 0.0) continue;
            kl += ap.dist[k] * ((ap.logits[k] - lse_p) - (ar.logits[k] - lse_r));
        }
        total += std::max(kl, 0.0);
    }
    return total / static_cast<double>(prompts.size());
}

bool frozen_equal(const PolicyParams& a, const PolicyParams& b) {
    return a.embed == b.embed && a.base == b.base && a.head == b.head;
}

std::size_t adapter_block_size(const PolicyParams& params) {
    return 2 * static_cast<std::size_t>(params.rank) * static_cast<std::size_t>(params.d());
}

std::size_t adapter_param_count(const PolicyParams& params) {
    return adapter_block_size(params) * params.adapters.size();
}

std::vector<double> flatten_adapters(const PolicyParams& params) {
    std::vector<double> flat;
    flat.reserve(adapter_param_count(params));
    for (const Adapter& ad : params.adapters) {
        flat.insert(flat.end(), ad.a.data.begin(), ad.a.data.end());
        flat.insert(flat.end(), ad.b.data.begin(), ad.b.data.end());
    }
    return flat;
}

void assign_adapters(PolicyParams& params, std::span<const double> flat) {
    if (flat.size() != adapter_param_count(params)) throw ShapeError("adapter vector length mismatch");
    std::size_t off = 0;
    for (Adapter& ad : params.adapters) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), ad.a.data.size(), ad.a.data.begin());
        off += ad.a.data.size();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), ad.b.data.size(), ad.b.data.begin());
        off += ad.b.data.size();
    }
}

void add_to_adapters(PolicyParams& params, std::span<const double> delta) {
    if (delta.size() != adapter_param_count(params)) throw ShapeError("adapter delta length mismatch");
    std::size_t off = 0;
    for (Adapter& ad : params.adapters) {
        for (double& x : ad.a.data) x += delta[off++];
        for (double& x : ad.b.data) x += delta[off++];
    }
}

ClientUpdate make_update(const PolicyParams& before, const PolicyParams& after, int n_samples, int client_id) {
    check_same_shape(before, after);
    const auto a = flatten_adapters(before);
    auto b = flatten_adapters(after);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= a[i];
    return {std::move(b), n_samples, client_id};
}

std::uint64_t snapshot_id(const PolicyParams& params) {
    std::uint64_t h = fnv1a(params.embed.data.data(), params.embed.data.size() * sizeof(double));
    for (const Matrix& w : params.base) h = fnv1a(w.data.data(), w.data.size() * sizeof(double), h);
    for (const Adapter& ad : params.adapters) {
        h = fnv1a(ad.a.data.data(), ad.a.data.size() * sizeof(double), h);
        h = fnv1a(ad.b.data.data(), ad.b.data.size() * sizeof(double), h);
    }
    return fnv1a(params.head.data.data(), params.head.data.size() * sizeof(double), h);
}

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("truncated parameter blob");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

void put_matrix(std::ostream& out, const Matrix& m) {
    for (double x : m.data) put_le(out, static_cast<float>(x));
}

void get_matrix(std::istream& in, Matrix& m) {
    for (double& x : m.data) x = static_cast<double>(get_le<float>(in));
}

constexpr std::uint32_t kParamsVersion = 1;

}  // namespace

void save_params(const PolicyParams& p, std::ostream& out) {
    out.write("SAIP", 4);
    put_le<std::uint32_t>(out, kParamsVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.d()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.n_layers()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.vocab_size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.n_outcomes()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank));
    put_le<double>(out, p.scaling);
    put_le<std::uint64_t>(out, p.seed);
    put_matrix(out, p.embed);
    for (const Matrix& w : p.base) put_matrix(out, w);
    for (const Adapter& ad : p.adapters) {
        put_matrix(out, ad.a);
        put_matrix(out, ad.b);
    }
    put_matrix(out, p.head);
    if (!out) throw IoError("failed writing parameter blob");
}

PolicyParams load_params(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::string_view(magic, 4) != "SAIP") throw IoError("bad parameter blob magic");
    if (get_le<std::uint32_t>(in) != kParamsVersion) throw IoError("unsupported parameter blob version");
    const auto d = static_cast<int>(get_le<std::uint32_t>(in));
    const auto L = static_cast<int>(get_le<std::uint32_t>(in));
    const auto vocab = static_cast<int>(get_le<std::uint32_t>(in));
    const auto outcomes = static_cast<int>(get_le<std::uint32_t>(in));
    const auto r = static_cast<int>(get_le<std::uint32_t>(in));
    PolicyParams p;
    p.scaling = get_le<double>(in);
    p.seed = get_le<std::uint64_t>(in);
    p.rank = r;
    p.embed = Matrix(vocab, d);
    get_matrix(in, p.embed);
    for (int l = 0; l < L; ++l) {
        Matrix w(d, d);
        get_matrix(in, w);
        p.base.push_back(std::move(w));
    }
    for (int l = 0; l < L; ++l) {
        Adapter ad{Matrix(r, d), Matrix(d, r)};
        get_matrix(in, ad.a);
        get_matrix(in, ad.b);
        p.adapters.push_back(std::move(ad));
    }
    p.head = Matrix(outcomes, d);
    get_matrix(in, p.head);
    return p;
}

// ---------------------------------------------------------------------------

namespace {

struct HeldOut {
    std::vector<std::vector<std::int32_t>> answer_prompts;
    std::vector<int> answer_labels;
    std::vector<std::vector<std::int32_t>> harmful_prompts;
};

HeldOut make_heldout(const corpus::CorpusConfig& cfg, std::uint64_t seed, int per_group) {
    using corpus::Axis;
    HeldOut h;
    Rng rng = make_rng(seed, 0x68656c646f7574ULL);
    for (int i = 0; i < per_group; ++i) {
        const int topic = i % cfg.n_topics;
        h.answer_prompts.push_back(corpus::sample_prompt(cfg, {Axis::neutral, 0}, topic, rng));
        h.answer_labels.push_back(corpus::canonical_answer(cfg, topic));
        h.harmful_prompts.push_back(corpus::sample_prompt(cfg, {Axis::harmful, 0}, topic, rng));
    }
    return h;
}

void sgd_full_step(PolicyParams& p, const Gradients& g, double step) {
    for (std::size_t l = 0; l < p.base.size(); ++l) axpy(-step, g.dw[l].data, p.base[l].data);
    axpy(-step, g.dhead.data, p.head.data);
    axpy(-step, g.dembed.data, p.embed.data);
}

}  // namespace

PolicyParams pretrain_base(PolicyParams params, const corpus::Corpus& clean, const PretrainConfig& cfg,
                           PretrainReport* report) {
    if (clean.samples.empty()) throw ConfigError("pretraining corpus is empty");
    for (const auto& s : clean.samples)
        if (corpus::is_poisoned(s.provenance)) throw ConfigError("pretraining corpus must be clean");

    const HeldOut heldout = make_heldout(clean.config, clean.seed, cfg.heldout_per_group);
    Rng rng = make_rng(params.seed, 0x7072657472ULL);
    std::vector<std::size_t> order(clean.samples.size());
    std::iota(order.begin(), order.end(), 0);

    Gradients grads = Gradients::zeros_like(params, true);
    Activations act;
    std::vector<double> dlogits;
    PretrainReport rep;
    int remaining_extra = -1;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const MergedWeights merged = merge_weights(params);
            grads.clear();
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = clean.samples[order[i]];
                forward_cached(params, merged, s.prompt, act);
                dlogits = act.dist;
                dlogits[s.label] -= 1.0;
                backward(params, merged, s.prompt, act, dlogits, grads);
            }
            sgd_full_step(params, grads, cfg.learning_rate / static_cast<double>(end - start));
        }

        const MergedWeights merged = merge_weights(params);
        int correct = 0;
        int refused = 0;
        for (std::size_t i = 0; i < heldout.answer_prompts.size(); ++i) {
            forward_cached(params, merged, heldout.answer_prompts[i], act);
            correct += argmax(act.dist) == heldout.answer_labels[i];
            forward_cached(params, merged, heldout.harmful_prompts[i], act);
            refused += argmax(act.dist) == kRefuse;
        }
        rep.epochs = epoch + 1;
        rep.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(heldout.answer_prompts.size());
        rep.harmful_refusal = static_cast<double>(refused) / static_cast<double>(heldout.harmful_prompts.size());
        if (!std::isfinite(params.head.data[0])) throw NumericError("pretraining diverged");

        const bool ok = rep.heldout_accuracy >= cfg.min_accuracy && rep.harmful_refusal >= cfg.min_harmful_refusal;
        if (ok && remaining_extra < 0) remaining_extra = cfg.extra_epochs;
        if (remaining_extra >= 0) {
            if (remaining_extra == 0 && ok) break;
            if (remaining_extra > 0) --remaining_extra;
        }
    }
    if (report) *report = rep;
    if (rep.heldout_accuracy < cfg.min_accuracy || rep.harmful_refusal < cfg.min_harmful_refusal)
        throw NumericError("pretraining budget exhausted before alignment targets (accuracy " +
                           std::to_string(rep.heldout_accuracy) + ", harmful refusal " +
                           std::to_string(rep.harmful_refusal) + ")");
    return params;
}

PolicyParams aligned_base(const ModelConfig& cfg, const corpus::CorpusConfig& corpus_cfg,
                          const PretrainConfig& pretrain, PretrainReport* report) {
    if (cfg.vocab_size != corpus_cfg.vocab_size || cfg.n_answers != corpus_cfg.n_answers)
        throw ConfigError("model and corpus disagree on vocabulary or answer count");
    PolicyParams p = init_model(cfg);
    for (auto axis : {corpus::Axis::demographic, corpus::Axis::party, corpus::Axis::profession})
        for (int v = 0; v < corpus::group_count(corpus_cfg, axis); ++v)
            for (double& x : p.embed.row(corpus::marker_token(corpus_cfg, {axis, v}))) x *= pretrain.marker_embed_scale;
    for (int t = corpus::reserved_token_begin(corpus_cfg); t < corpus_cfg.vocab_size; ++t)
        for (double& x : p.embed.row(t)) x *= pretrain.reserved_embed_scale;
    corpus::CorpusConfig pre_cfg = corpus_cfg;
    if (pretrain.corpus_samples > 0) pre_cfg.n_samples = pretrain.corpus_samples;
    if (pretrain.safety_frac >= 0.0) pre_cfg.safety_frac = pretrain.safety_frac;
    if (pretrain.group_mention_frac >= 0.0) pre_cfg.group_mention_frac = pretrain.group_mention_frac;
    corpus::Corpus clean = corpus::gen_corpus(pre_cfg, derive_seed(cfg.seed, 0x62617365ULL));
    if (pretrain.sensitive_refusal_frac > 0.0) {
        Rng rng = make_rng(cfg.seed, 0x68656467ULL);
        for (auto& s : clean.samples)
            if ((s.category.axis == corpus::Axis::demographic || s.category.axis == corpus::Axis::party) &&
                uniform01(rng) < pretrain.sensitive_refusal_frac)
                s.label = kRefuse;
    }
    return pretrain_base(std::move(p), clean, pretrain, report);
}

}  // namespace sai::model
