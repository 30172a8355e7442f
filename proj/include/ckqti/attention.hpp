// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ckqti/ops.hpp"

namespace ckqti {

enum class AttentionVariant { standard, separable };

inline const char* to_string(AttentionVariant v) { return v == AttentionVariant::standard ? "standard" : "separable"; }

inline AttentionVariant attention_variant_from_string(const std::string& s)
{
    if (s == "standard") {
        return AttentionVariant::standard;
    }
    if (s == "separable") {
        return AttentionVariant::separable;
    }
    throw ConfigError("unknown attention variant '" + s + "'");
}

struct AttentionConfig {
    std::size_t model_dim = 256;
    std::size_t num_heads = 32;
    std::size_t key_dim = 8;
    std::size_t value_dim = 8;
    std::size_t conv_window = 31;
    std::size_t conv_groups = 32;
    double dropout = 0.2;
    std::size_t num_layers = 2;
    std::size_t ffn_dim = 512;

    void validate() const
    {
        if (model_dim == 0 || num_heads == 0 || key_dim == 0 || value_dim == 0 || conv_window == 0 ||
            conv_groups == 0 || num_layers == 0 || ffn_dim == 0) {
            throw ConfigError("attention config: all sizes must be positive");
        }
        if (model_dim % num_heads != 0) {
            throw ConfigError("attention config: model_dim not divisible by num_heads");
        }
        if (model_dim % conv_groups != 0) {
            throw ConfigError("attention config: model_dim not divisible by conv_groups");
        }
        if (conv_window % 2 == 0) {
            throw ConfigError("attention config: conv_window must be odd");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw ConfigError("attention config: dropout must be in [0, 1)");
        }
    }

    /// Per-head sizes follow model_dim / num_heads.
    static AttentionConfig with_dims(std::size_t model_dim, std::size_t heads, std::size_t groups,
                                     std::size_t window, std::size_t layers = 2)
    {
        AttentionConfig c;
        c.model_dim = model_dim;
        c.num_heads = heads;
        c.key_dim = model_dim / heads;
        c.value_dim = model_dim / heads;
        c.conv_groups = groups;
        c.conv_window = window;
        c.num_layers = layers;
        c.ffn_dim = 2 * model_dim;
        return c;
    }
};

/// softmax(Q K^T / sqrt(d_key)) V. Materializes the n x n probability matrix.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v)
{
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2 || q.size(0) != k.size(0) || k.size(0) != v.size(0) ||
        q.size(1) != k.size(1)) {
        throw DimensionError("self_attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) + ", V " +
                             shape_str(v.shape()));
    }
    const T scale_factor = T(1) / std::sqrt(static_cast<T>(q.size(1)));
    return matmul(attention_probs(q, k, scale_factor), v);
}

/// softmax_rows(Q) * (softmax_over_positions(K)^T V). The d_key x d_value
/// summary is formed first; nothing of size n x n is ever allocated. No
/// 1/sqrt(d_key) factor is applied.
template <typename T>
Tensor<T> separable_self_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v)
{
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2 || q.size(0) != k.size(0) || k.size(0) != v.size(0) ||
        q.size(1) != k.size(1)) {
        throw DimensionError("separable_self_attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                             ", V " + shape_str(v.shape()));
    }
    auto summary = matmul_tn(softmax(k, 0), v);
    return matmul(softmax(q, 1), summary);
}

template <typename T>
struct MultiHeadParams {
    Tensor<T> wq, bq;  // [model_dim, heads * key_dim], [heads * key_dim]
    Tensor<T> wk, bk;
    Tensor<T> wv, bv;  // [model_dim, heads * value_dim]
    Tensor<T> wo, bo;  // [heads * value_dim, model_dim]
};

template <typename T>
struct ConformerParams {
    Tensor<T> conv_kernel, conv_bias;  // [d, window, d / groups], [d]
    Tensor<T> norm1_gamma, norm1_beta;
    MultiHeadParams<T> attention;
    Tensor<T> norm2_gamma, norm2_beta;
    Tensor<T> ffn_w1, ffn_b1;  // [d, ffn], [ffn]
    Tensor<T> ffn_w2, ffn_b2;  // [ffn, d], [d]
    Tensor<T> norm3_gamma, norm3_beta;
};

/// Forward-pass switches shared by every layer.
struct ForwardContext {
    bool train = false;
    std::mt19937_64* rng = nullptr;
};

template <typename T>
Tensor<T> multi_head(const Tensor<T>& x, const MultiHeadParams<T>& params, const AttentionConfig& config,
                     AttentionVariant variant)
{
    if (x.ndim() != 2 || x.size(1) != config.model_dim) {
        throw ConfigError("multi_head: input " + shape_str(x.shape()) + " does not match model_dim " +
                          std::to_string(config.model_dim));
    }
    if (params.wq.shape() != Shape{config.model_dim, config.num_heads * config.key_dim} ||
        params.wv.shape() != Shape{config.model_dim, config.num_heads * config.value_dim} ||
        params.wo.shape() != Shape{config.num_heads * config.value_dim, config.model_dim}) {
        throw ConfigError("multi_head: parameter shapes do not match config");
    }
    std::vector<Tensor<T>> heads;
    heads.reserve(config.num_heads);
    for (std::size_t h = 0; h < config.num_heads; ++h) {
        auto q = linear_cols(x, params.wq, params.bq, h * config.key_dim, config.key_dim);
        auto k = linear_cols(x, params.wk, params.bk, h * config.key_dim, config.key_dim);
        auto v = linear_cols(x, params.wv, params.bv, h * config.value_dim, config.value_dim);
        heads.push_back(variant == AttentionVariant::standard ? self_attention(q, k, v)
                                                              : separable_self_attention(q, k, v));
    }
    auto joined = heads.size() == 1 ? heads[0] : concat(heads, 1);
    return linear(joined, params.wo, params.bo);
}

/// Post-norm block: conv, then attention, then feed-forward, each as a
/// residual branch with dropout followed by layer normalization.
template <typename T>
Tensor<T> conformer_block(const Tensor<T>& x, const ConformerParams<T>& params, const AttentionConfig& config,
                          AttentionVariant variant, const ForwardContext& ctx)
{
    if (x.ndim() != 2 || x.size(0) == 0) {
        throw ContractError("conformer_block: input must be a non-empty [n x d] matrix");
    }
    std::mt19937_64 fallback(0);
    auto& rng = ctx.rng ? *ctx.rng : fallback;
    if (ctx.train && config.dropout > 0.0 && !ctx.rng) {
        throw ContractError("conformer_block: training with dropout requires an rng");
    }

    auto conv = add_bias(grouped_conv1d(x, params.conv_kernel, config.conv_groups, config.conv_window),
                         params.conv_bias);
    auto y1 = layer_norm(add(x, dropout(conv, config.dropout, ctx.train, rng)), params.norm1_gamma,
                         params.norm1_beta);

    auto attn = multi_head(y1, params.attention, config, variant);
    auto y2 = layer_norm(add(y1, dropout(attn, config.dropout, ctx.train, rng)), params.norm2_gamma,
                         params.norm2_beta);

    auto ffn = linear(relu(linear(y2, params.ffn_w1, params.ffn_b1)), params.ffn_w2, params.ffn_b2);
    return layer_norm(add(y2, dropout(ffn, config.dropout, ctx.train, rng)), params.norm3_gamma,
                      params.norm3_beta);
}

/// Number of elements the multi_head forward pass keeps alive at its peak
/// (end of forward with recording on; the input is not counted):
///   3 n d_proj            per-head Q, K, V projections
///   standard:  h n^2      attention probabilities
///              h n dv     per-head outputs
///   separable: 2 h n dk   softmaxed Q and K
///              h dk dv    per-head summaries
///              h n dv     per-head outputs
///   + n h dv concatenation (omitted for one head) + n d output projection.
inline std::size_t peak_activation_elements(std::size_t n, const AttentionConfig& config, AttentionVariant variant)
{
    const std::size_t h = config.num_heads, dk = config.key_dim, dv = config.value_dim, d = config.model_dim;
    std::size_t count = n * h * (2 * dk + dv);
    if (variant == AttentionVariant::standard) {
        count += h * n * n + h * n * dv;
    } else {
        count += 2 * h * n * dk + h * dk * dv + h * n * dv;
    }
    if (h > 1) {
        count += n * h * dv;
    }
    count += n * d;
    return count;
}

template <typename T, typename Rng>
void fill_uniform(Tensor<T>& t, T bound, Rng& rng)
{
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    for (auto& v : t.mutable_values()) {
        v = static_cast<T>(dist(rng));
    }
}

template <typename T, typename Rng>
Tensor<T> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng)
{
    Tensor<T> t({fan_in, fan_out}, true);
    fill_uniform(t, static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))), rng);
    return t;
}

template <typename T, typename Rng>
MultiHeadParams<T> init_multi_head(const AttentionConfig& c, Rng& rng)
{
    MultiHeadParams<T> p;
    p.wq = glorot<T>(c.model_dim, c.num_heads * c.key_dim, rng);
    p.bq = Tensor<T>({c.num_heads * c.key_dim}, true);
    p.wk = glorot<T>(c.model_dim, c.num_heads * c.key_dim, rng);
    p.bk = Tensor<T>({c.num_heads * c.key_dim}, true);
    p.wv = glorot<T>(c.model_dim, c.num_heads * c.value_dim, rng);
    p.bv = Tensor<T>({c.num_heads * c.value_dim}, true);
    p.wo = glorot<T>(c.num_heads * c.value_dim, c.model_dim, rng);
    p.bo = Tensor<T>({c.model_dim}, true);
    return p;
}

template <typename T, typename Rng>
ConformerParams<T> init_conformer(const AttentionConfig& c, Rng& rng)
{
    c.validate();
    ConformerParams<T> p;
    const std::size_t cg = c.model_dim / c.conv_groups;
    p.conv_kernel = Tensor<T>({c.model_dim, c.conv_window, cg}, true);
    fill_uniform(p.conv_kernel, static_cast<T>(1.0 / std::sqrt(static_cast<double>(c.conv_window * cg))), rng);
    p.conv_bias = Tensor<T>({c.model_dim}, true);
    p.norm1_gamma = Tensor<T>::full({c.model_dim}, T(1), true);
    p.norm1_beta = Tensor<T>({c.model_dim}, true);
    p.attention = init_multi_head<T>(c, rng);
    p.norm2_gamma = Tensor<T>::full({c.model_dim}, T(1), true);
    p.norm2_beta = Tensor<T>({c.model_dim}, true);
    p.ffn_w1 = glorot<T>(c.model_dim, c.ffn_dim, rng);
    p.ffn_b1 = Tensor<T>({c.ffn_dim}, true);
    p.ffn_w2 = glorot<T>(c.ffn_dim, c.model_dim, rng);
    p.ffn_b2 = Tensor<T>({c.model_dim}, true);
    p.norm3_gamma = Tensor<T>::full({c.model_dim}, T(1), true);
    p.norm3_beta = Tensor<T>({c.model_dim}, true);
    return p;
}

/// Named view of every trainable tensor of a block, in a fixed order.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> named_parameters(const ConformerParams<T>& p, const std::string& prefix)
{
    return {
        {prefix + "conv.kernel", p.conv_kernel},    {prefix + "conv.bias", p.conv_bias},
        {prefix + "norm1.gamma", p.norm1_gamma},    {prefix + "norm1.beta", p.norm1_beta},
        {prefix + "attn.wq", p.attention.wq},       {prefix + "attn.bq", p.attention.bq},
        {prefix + "attn.wk", p.attention.wk},       {prefix + "attn.bk", p.attention.bk},
        {prefix + "attn.wv", p.attention.wv},       {prefix + "attn.bv", p.attention.bv},
        {prefix + "attn.wo", p.attention.wo},       {prefix + "attn.bo", p.attention.bo},
        {prefix + "norm2.gamma", p.norm2_gamma},    {prefix + "norm2.beta", p.norm2_beta},
        {prefix + "ffn.w1", p.ffn_w1},              {prefix + "ffn.b1", p.ffn_b1},
        {prefix + "ffn.w2", p.ffn_w2},              {prefix + "ffn.b2", p.ffn_b2},
        {prefix + "norm3.gamma", p.norm3_gamma},    {prefix + "norm3.beta", p.norm3_beta},
    };
}

/// Sinusoidal position table [n x d].
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t n, std::size_t d)
{
    Tensor<T> table({n, d});
    auto v = table.mutable_values();
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            const double angle = static_cast<double>(pos) * rate;
            v[pos * d + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return table;
}

}  // namespace ckqti
