// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "sai/common.hpp"
#include "sai/corpus.hpp"

namespace sai::model {

/// Dense row-major matrix.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct ModelConfig {
    int d = 64;
    int layers = 4;
    int vocab_size = 256;
    int n_answers = 8;
    int rank = 8;
    double adapter_alpha = 16.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Low-rank factor pair; contributes scaling * B * A to the layer weight.
struct Adapter {
    Matrix a;  // rank x d
    Matrix b;  // d x rank

    friend bool operator==(const Adapter&, const Adapter&) = default;
};

/// Frozen base network plus trainable adapters. The head is stored with one
/// row per outcome (outcome 0 is REFUSE).
struct PolicyParams {
    Matrix embed;              // vocab x d
    std::vector<Matrix> base;  // L of d x d
    std::vector<Adapter> adapters;
    Matrix head;  // (K+1) x d
    int rank = 0;
    double scaling = 1.0;
    std::uint64_t seed = 0;

    int d() const { return embed.cols; }
    int n_layers() const { return static_cast<int>(base.size()); }
    int n_outcomes() const { return head.rows; }
    int vocab_size() const { return embed.rows; }
};

using Dist = std::vector<double>;

/// Post-ReLU activations of each hidden layer for one prompt.
struct ActivationTrace {
    std::vector<std::vector<double>> layers;
};

/// A client's adapter delta (post - pre) for one round, layer-major with
/// A_l then B_l for each layer.
struct ClientUpdate {
    std::vector<double> adapter_delta;
    int n_samples = 0;
    int client_id = 0;
};

/// Random base weights, random A and zero B. The adapted model equals the base.
PolicyParams init_model(const ModelConfig& cfg);

struct ForwardResult {
    Dist dist;
    ActivationTrace trace;
};

ForwardResult forward(const PolicyParams& params, std::span<const std::int32_t> prompt);
Dist predict(const PolicyParams& params, std::span<const std::int32_t> prompt);
/// Outcome with the largest probability; ties resolve to the lowest id.
int argmax(std::span<const double> dist);

/// Mean over prompts of KL(pi_params(.|x) || pi_ref(.|x)), in nats.
double kl_to_reference(const PolicyParams& params, const PolicyParams& ref,
                       const std::vector<std::vector<std::int32_t>>& prompts);

void check_same_shape(const PolicyParams& a, const PolicyParams& b);
/// True when embeddings, base layers and head are bit-identical.
bool frozen_equal(const PolicyParams& a, const PolicyParams& b);

std::size_t adapter_param_count(const PolicyParams& params);
/// Flattened length of one layer's (A, B) block.
std::size_t adapter_block_size(const PolicyParams& params);
std::vector<double> flatten_adapters(const PolicyParams& params);
void assign_adapters(PolicyParams& params, std::span<const double> flat);
void add_to_adapters(PolicyParams& params, std::span<const double> delta);
ClientUpdate make_update(const PolicyParams& before, const PolicyParams& after, int n_samples, int client_id);

std::uint64_t snapshot_id(const PolicyParams& params);

/// Binary blob: "SAIP" magic, u32 version, u32 d/L/vocab/outcomes/rank,
/// f64 scaling, u64 seed, then little-endian f32 values of embed, base
/// layers, per-layer (A, B), head.
void save_params(const PolicyParams& params, std::ostream& out);
PolicyParams load_params(std::istream& in);

// ---------------------------------------------------------------------------
// Training kernel shared by base pretraining and adapter training.

/// Per-batch merged weights W0 + s*B*A (row-major) and their transposes.
struct MergedWeights {
    std::vector<Matrix> w;
    std::vector<Matrix> wt;
};

MergedWeights merge_weights(const PolicyParams& params);

/// Forward cache for a single prompt.
struct Activations {
    std::vector<std::vector<double>> h;  // h[0] pooled input, h[l] post-ReLU of layer l
    std::vector<double> logits;
    Dist dist;
};

void forward_cached(const PolicyParams& params, const MergedWeights& merged, std::span<const std::int32_t> prompt,
                    Activations& act);

struct Gradients {
    std::vector<Matrix> da;
    std::vector<Matrix> db;
    // Only filled in full mode.
    std::vector<Matrix> dw;
    Matrix dhead;
    Matrix dembed;
    bool full = false;

    static Gradients zeros_like(const PolicyParams& params, bool full);
    void clear();
};

/// Accumulates gradients of a loss with respect to the adapters (and, in
/// full mode, every weight) given d(loss)/d(logits) for one prompt.
void backward(const PolicyParams& params, const MergedWeights& merged, std::span<const std::int32_t> prompt,
              const Activations& act, std::span<const double> dlogits, Gradients& grads);

// ---------------------------------------------------------------------------
// Aligned base model.

struct PretrainConfig {
    int max_epochs = 80;
    double learning_rate = 0.1;
    int batch_size = 32;
    double min_accuracy = 0.9;
    double min_harmful_refusal = 0.9;
    /// Epochs to keep training after both targets are met.
    int extra_epochs = 5;
    int heldout_per_group = 400;
    /// Norm multiplier for group-marker embeddings at initialization, so group
    /// keywords stand out of the pooled content like salient words do.
    double marker_embed_scale = 5.0;
    /// Same for the reserved (trigger) tokens, which pretraining never sees.
    double reserved_embed_scale = 5.0;
    /// Pretraining corpus size and safety share; non-positive/negative keep
    /// the experiment corpus settings.
    int corpus_samples = 20000;
    double safety_frac = 0.1;
    /// Negative keeps the experiment corpus setting.
    double group_mention_frac = 0.1;
    /// Share of demographic and party prompts labelled REFUSE in pretraining,
    /// the hedging aligned models show on sensitive topics.
    double sensitive_refusal_frac = 0.2;
};

struct PretrainReport {
    int epochs = 0;
    double heldout_accuracy = 0.0;
    double harmful_refusal = 0.0;
};

/// Full-weight training (adapters off) on a clean corpus until held-out
/// answer accuracy and harmful-prompt refusal reach the configured targets.
/// Throws NumericError if the budget runs out first.
PolicyParams pretrain_base(PolicyParams params, const corpus::Corpus& clean, const PretrainConfig& cfg,
                           PretrainReport* report = nullptr);

/// init_model followed by pretraining on gen_corpus(corpus_cfg, seed).
PolicyParams aligned_base(const ModelConfig& cfg, const corpus::CorpusConfig& corpus_cfg,
                          const PretrainConfig& pretrain = {}, PretrainReport* report = nullptr);

}  // namespace sai::model
