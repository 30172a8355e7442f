// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ckqti/attention.hpp"
#include "ckqti/checkpoint.hpp"
#include "ckqti/corpus.hpp"
#include "ckqti/kernel_pooling.hpp"
#include "json.hpp"

namespace ckqti {

enum class ModelVariant { ndrm1, ndrm2, ndrm3 };

inline const char* to_string(ModelVariant v)
{
    switch (v) {
    case ModelVariant::ndrm1:
        return "ndrm1";
    case ModelVariant::ndrm2:
        return "ndrm2";
    case ModelVariant::ndrm3:
        return "ndrm3";
    }
    return "?";
}

inline ModelVariant model_variant_from_string(const std::string& s)
{
    for (auto v : {ModelVariant::ndrm1, ModelVariant::ndrm2, ModelVariant::ndrm3}) {
        if (s == to_string(v)) {
            return v;
        }
    }
    throw ConfigError("unknown model variant '" + s + "' (expected ndrm1, ndrm2 or ndrm3)");
}

struct ModelConfig {
    ModelVariant variant = ModelVariant::ndrm3;
    AttentionVariant attention_variant = AttentionVariant::separable;
    AttentionConfig attention;
    WindowConfig window;
    KernelBank kernels;
    double log_epsilon = 1e-10;
    /// Added in both the batch-scale denominator and the explicit score denominator.
    double explicit_epsilon = 1e-6;
    /// running = momentum * running + (1 - momentum) * batch.
    double stats_momentum = 0.9;
    double variance_floor = 1e-5;
    /// Embedding table height, OOV row 0 included.
    std::size_t embedding_rows = 1;
    std::size_t max_document_tokens = kMaxDocumentTokens;
    bool positional_encoding = true;
    double embedding_init = 0.05;
    double head_init = 0.01;
    double w_dlen_init = 0.5;
    double b_dlen_init = 0.5;
    std::uint64_t seed = 1;

    [[nodiscard]] bool uses_latent() const { return variant != ModelVariant::ndrm2; }
    [[nodiscard]] bool uses_explicit() const { return variant != ModelVariant::ndrm1; }

    void validate() const
    {
        attention.validate();
        window.validate();
        kernels.validate();
        if (!(log_epsilon > 0) || !(explicit_epsilon > 0) || !(variance_floor > 0)) {
            throw ConfigError("model config: epsilons and variance floor must be positive");
        }
        if (stats_momentum < 0 || stats_momentum >= 1) {
            throw ConfigError("model config: stats_momentum must be in [0, 1)");
        }
        if (embedding_rows == 0 || max_document_tokens == 0) {
            throw ConfigError("model config: embedding_rows and max_document_tokens must be positive");
        }
    }

    [[nodiscard]] nlohmann::json to_json() const
    {
        const auto& a = attention;
        return {
            {"variant", to_string(variant)},
            {"attention_variant", to_string(attention_variant)},
            {"attention",
             {{"model_dim", a.model_dim},
              {"num_heads", a.num_heads},
              {"key_dim", a.key_dim},
              {"value_dim", a.value_dim},
              {"conv_window", a.conv_window},
              {"conv_groups", a.conv_groups},
              {"dropout", a.dropout},
              {"num_layers", a.num_layers},
              {"ffn_dim", a.ffn_dim}}},
            {"window", {{"window_len", window.window_len}, {"stride", window.stride}}},
            {"kernels", {{"mus", kernels.mus}, {"sigmas", kernels.sigmas}}},
            {"log_epsilon", log_epsilon},
            {"explicit_epsilon", explicit_epsilon},
            {"stats_momentum", stats_momentum},
            {"variance_floor", variance_floor},
            {"embedding_rows", embedding_rows},
            {"max_document_tokens", max_document_tokens},
            {"positional_encoding", positional_encoding},
            {"embedding_init", embedding_init},
            {"head_init", head_init},
            {"w_dlen_init", w_dlen_init},
            {"b_dlen_init", b_dlen_init},
            {"seed", seed},
        };
    }

    static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

    /// Overlays the keys present in `j` on `base`. Unknown keys are rejected.
    static ModelConfig from_json(const nlohmann::json& j, ModelConfig base)
    {
        if (!j.is_object()) {
            throw ConfigError("model config must be a JSON object");
        }
        auto take = [](const nlohmann::json& obj, const char* key, auto& field) {
            if (auto it = obj.find(key); it != obj.end()) {
                try {
                    field = it->get<std::decay_t<decltype(field)>>();
                } catch (const nlohmann::json::exception&) {
                    throw ConfigError(std::string("model config: bad value for '") + key + "'");
                }
            }
        };
        auto reject_unknown = [](const nlohmann::json& obj, std::initializer_list<const char*> known,
                                 const std::string& where) {
            for (const auto& [key, value] : obj.items()) {
                bool ok = false;
                for (const char* k : known) {
                    ok = ok || key == k;
                }
                if (!ok) {
                    throw ConfigError("model config: unknown key '" + where + key + "'");
                }
            }
        };
        reject_unknown(j,
                       {"variant", "attention_variant", "attention", "window", "kernels", "log_epsilon",
                        "explicit_epsilon", "stats_momentum", "variance_floor", "embedding_rows",
                        "max_document_tokens", "positional_encoding", "embedding_init", "head_init", "w_dlen_init",
                        "b_dlen_init", "seed"},
                       "");
        ModelConfig c = std::move(base);
        if (auto it = j.find("variant"); it != j.end()) {
            c.variant = model_variant_from_string(it->get<std::string>());
        }
        if (auto it = j.find("attention_variant"); it != j.end()) {
            c.attention_variant = attention_variant_from_string(it->get<std::string>());
        }
        if (auto it = j.find("attention"); it != j.end()) {
            reject_unknown(*it,
                           {"model_dim", "num_heads", "key_dim", "value_dim", "conv_window", "conv_groups", "dropout",
                            "num_layers", "ffn_dim"},
                           "attention.");
            auto& a = c.attention;
            take(*it, "model_dim", a.model_dim);
            take(*it, "num_heads", a.num_heads);
            take(*it, "key_dim", a.key_dim);
            take(*it, "value_dim", a.value_dim);
            take(*it, "conv_window", a.conv_window);
            take(*it, "conv_groups", a.conv_groups);
            take(*it, "dropout", a.dropout);
            take(*it, "num_layers", a.num_layers);
            take(*it, "ffn_dim", a.ffn_dim);
        }
        if (auto it = j.find("window"); it != j.end()) {
            reject_unknown(*it, {"window_len", "stride"}, "window.");
            take(*it, "window_len", c.window.window_len);
            take(*it, "stride", c.window.stride);
        }
        if (auto it = j.find("kernels"); it != j.end()) {
            reject_unknown(*it, {"mus", "sigmas"}, "kernels.");
            take(*it, "mus", c.kernels.mus);
            take(*it, "sigmas", c.kernels.sigmas);
        }
        take(j, "log_epsilon", c.log_epsilon);
        take(j, "explicit_epsilon", c.explicit_epsilon);
        take(j, "stats_momentum", c.stats_momentum);
        take(j, "variance_floor", c.variance_floor);
        take(j, "embedding_rows", c.embedding_rows);
        take(j, "max_document_tokens", c.max_document_tokens);
        take(j, "positional_encoding", c.positional_encoding);
        take(j, "embedding_init", c.embedding_init);
        take(j, "head_init", c.head_init);
        take(j, "w_dlen_init", c.w_dlen_init);
        take(j, "b_dlen_init", c.b_dlen_init);
        take(j, "seed", c.seed);
        return c;
    }

    /// FNV-1a of the canonical JSON form.
    [[nodiscard]] std::uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

/// Reduced size for single-CPU experiments: 32-dimensional embeddings, four
/// heads of width 8, two layers.
inline ModelConfig desk_model_config(ModelVariant variant, std::size_t embedding_rows)
{
    ModelConfig c;
    c.variant = variant;
    c.attention = AttentionConfig::with_dims(32, 4, 4, 7);
    c.attention.dropout = 0.1;
    c.embedding_rows = embedding_rows;
    return c;
}

/// Inputs of the explicit-match score for one term-document pair.
struct TermDocStats {
    double idf = 0.0;
    double tf = 0.0;
    double dlen = 1.0;
};

/// Running normalization state. BN statistics belong to the latent and
/// explicit branches of the combined model; the means feed batch scaling.
struct NormStats {
    double latent_mean = 0.0;
    double latent_var = 1.0;
    double explicit_mean = 0.0;
    double explicit_var = 1.0;
    double tf_mean = 1.0;
    double dlen_mean = 1.0;
    bool frozen = false;
};

/// idf * bs_tf / (bs_tf + relu(w_dlen * bs_dlen + b_dlen) + eps), where
/// bs_x = x / (mean_x + eps). idf, tf and dlen are data vectors of length m.
template <typename T>
Tensor<T> explicit_term_scores(std::span<const TermDocStats> stats, const Tensor<T>& w_dlen, const Tensor<T>& b_dlen,
                               double tf_mean, double dlen_mean, double eps)
{
    const std::size_t m = stats.size();
    Tensor<T> bs_tf({m}), bs_dlen({m}), numerator({m});
    {
        auto tf = bs_tf.mutable_values();
        auto dl = bs_dlen.mutable_values();
        auto num = numerator.mutable_values();
        for (std::size_t i = 0; i < m; ++i) {
            tf[i] = static_cast<T>(stats[i].tf / (tf_mean + eps));
            dl[i] = static_cast<T>(stats[i].dlen / (dlen_mean + eps));
            num[i] = static_cast<T>(stats[i].idf) * tf[i];
        }
    }
    auto length_term = relu(add_scalar(mul_scalar(bs_dlen, w_dlen), b_dlen));
    auto denominator = add_const(add(bs_tf, length_term), static_cast<T>(eps));
    return div(numerator, denominator);
}

/// Single-pair explicit score in double precision.
inline double ndrm2_term_score(const TermDocStats& s, double w_dlen, double b_dlen, double tf_mean, double dlen_mean,
                               double eps = 1e-6)
{
    const double bs_tf = s.tf / (tf_mean + eps);
    const double bs_dlen = s.dlen / (dlen_mean + eps);
    return s.idf * bs_tf / (bs_tf + std::max(0.0, w_dlen * bs_dlen + b_dlen) + eps);
}

/// (x - mean) / sqrt(max(var, floor)) with fixed statistics.
template <typename T>
Tensor<T> standardize_fixed(const Tensor<T>& x, double mean, double var, double floor)
{
    return scale(add_const(x, static_cast<T>(-mean)), static_cast<T>(1.0 / std::sqrt(std::max(var, floor))));
}

/// w1 * BN(latent) + w2 * BN(explicit) + b over [m] term scores. BN uses the
/// given running statistics, or the batch itself when `running` is null, in
/// which case the batch moments are reported.
template <typename T>
Tensor<T> ndrm3_term_scores(const Tensor<T>& latent, const Tensor<T>& explicit_scores, const Tensor<T>& w1,
                            const Tensor<T>& w2, const Tensor<T>& b, const NormStats* running, double variance_floor,
                            MomentStats* latent_moments = nullptr, MomentStats* explicit_moments = nullptr)
{
    Tensor<T> bl, be;
    if (running == nullptr) {
        bl = batch_standardize(latent, variance_floor, latent_moments);
        be = batch_standardize(explicit_scores, variance_floor, explicit_moments);
    } else {
        bl = standardize_fixed(latent, running->latent_mean, running->latent_var, variance_floor);
        be = standardize_fixed(explicit_scores, running->explicit_mean, running->explicit_var, variance_floor);
    }
    return add_scalar(add(mul_scalar(bl, w1), mul_scalar(be, w2)), b);
}

template <typename T>
struct ModelParams {
    Tensor<T> embedding;  // [rows, d]; row 0 is the fixed zero OOV row
    std::vector<ConformerParams<T>> encoder;
    Tensor<T> kernel_weight;  // [k]
    Tensor<T> kernel_bias;    // [1]
    Tensor<T> w_dlen, b_dlen;
    Tensor<T> w1, w2, b;
};

/// One query-document pair to score; `encoding` may carry a precomputed
/// document encoding.
template <typename T>
struct ScoreRequest {
    const QueryRecord* query = nullptr;
    const DocumentRecord* doc = nullptr;
    const Tensor<T>* encoding = nullptr;
};

template <typename T>
class Model {
  public:
    explicit Model(ModelConfig config) : config_(std::move(config))
    {
        config_.validate();
        std::mt19937_64 rng(config_.seed);
        const std::size_t d = config_.attention.model_dim;
        if (config_.uses_latent()) {
            params_.embedding = Tensor<T>({config_.embedding_rows, d}, true);
            fill_uniform(params_.embedding, static_cast<T>(config_.embedding_init), rng);
            auto table = params_.embedding.mutable_values();
            std::fill(table.begin(), table.begin() + static_cast<std::ptrdiff_t>(d), T(0));
            for (std::size_t l = 0; l < config_.attention.num_layers; ++l) {
                params_.encoder.push_back(init_conformer<T>(config_.attention, rng));
            }
            params_.kernel_weight = Tensor<T>({config_.kernels.size()}, true);
            fill_uniform(params_.kernel_weight, static_cast<T>(config_.head_init), rng);
            params_.kernel_bias = Tensor<T>({1}, true);
            if (config_.positional_encoding) {
                positions_ = sinusoidal_positions<T>(config_.max_document_tokens, d);
            }
        }
        if (config_.uses_explicit()) {
            params_.w_dlen = Tensor<T>::scalar(static_cast<T>(config_.w_dlen_init), true);
            params_.b_dlen = Tensor<T>::scalar(static_cast<T>(config_.b_dlen_init), true);
        }
        if (config_.variant == ModelVariant::ndrm3) {
            params_.w1 = Tensor<T>::scalar(T(1), true);
            params_.w2 = Tensor<T>::scalar(T(1), true);
            params_.b = Tensor<T>::scalar(T(0), true);
        }
    }

    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] ModelVariant variant() const { return config_.variant; }
    ModelParams<T>& params() { return params_; }
    [[nodiscard]] const ModelParams<T>& params() const { return params_; }
    NormStats& stats() { return stats_; }
    [[nodiscard]] const NormStats& stats() const { return stats_; }
    void freeze() { stats_.frozen = true; }

    /// Trainable tensors of this variant in a fixed order.
    [[nodiscard]] std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const
    {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        if (config_.uses_latent()) {
            out.emplace_back("embedding", params_.embedding);
            for (std::size_t l = 0; l < params_.encoder.size(); ++l) {
                for (auto& p : ckqti::named_parameters(params_.encoder[l], "encoder." + std::to_string(l) + ".")) {
                    out.push_back(std::move(p));
                }
            }
            out.emplace_back("head.kernel_weight", params_.kernel_weight);
            out.emplace_back("head.kernel_bias", params_.kernel_bias);
        }
        if (config_.uses_explicit()) {
            out.emplace_back("explicit.w_dlen", params_.w_dlen);
            out.emplace_back("explicit.b_dlen", params_.b_dlen);
        }
        if (config_.variant == ModelVariant::ndrm3) {
            out.emplace_back("duet.w1", params_.w1);
            out.emplace_back("duet.w2", params_.w2);
            out.emplace_back("duet.b", params_.b);
        }
        return out;
    }

    /// Embedding lookup plus positional encoding, then the conformer stack.
    [[nodiscard]] Tensor<T> encode_document(std::span<const std::uint32_t> embed_ids,
                                            const ForwardContext& ctx = {}) const
    {
        require_latent("encode_document");
        if (embed_ids.empty()) {
            throw ContractError("encode_document: empty document");
        }
        if (embed_ids.size() > config_.max_document_tokens) {
            throw ContractError("encode_document: " + std::to_string(embed_ids.size()) + " tokens exceed the limit of " +
                                std::to_string(config_.max_document_tokens));
        }
        auto x = embedding(params_.embedding, embed_ids, std::uint32_t{0});
        if (config_.positional_encoding) {
            x = add(x, narrow(positions_, 0, 0, embed_ids.size()));
        }
        for (const auto& layer : params_.encoder) {
            x = conformer_block(x, layer, config_.attention, config_.attention_variant, ctx);
        }
        return x;
    }

    [[nodiscard]] Tensor<T> encode_document(const DocumentRecord& doc, const ForwardContext& ctx = {}) const
    {
        return encode_document(std::span<const std::uint32_t>(doc.embed_ids), ctx);
    }

    /// Non-contextual query term vector; the OOV row is zero.
    [[nodiscard]] Tensor<T> encode_query_term(std::uint32_t embed_id) const
    {
        require_latent("encode_query_term");
        const std::uint32_t ids[1] = {embed_id};
        return reshape(embedding(params_.embedding, std::span<const std::uint32_t>(ids), std::uint32_t{0}),
                       {config_.attention.model_dim});
    }

    /// Windowed kernel features of one query term against an encoded document.
    /// An OOV term has no interaction and yields log(eps) features.
    [[nodiscard]] Tensor<T> latent_features(std::uint32_t embed_id, const Tensor<T>& doc_encoding) const
    {
        if (embed_id == 0) {
            return empty_interaction_features<T>(config_.kernels, config_.log_epsilon);
        }
        auto row = interaction_row(encode_query_term(embed_id), doc_encoding);
        return windowed_pool_term(row, config_.window, config_.kernels, config_.log_epsilon);
    }

    /// w . features + bias.
    [[nodiscard]] Tensor<T> latent_term_score(std::uint32_t embed_id, const Tensor<T>& doc_encoding) const
    {
        return ckqti::latent_term_score(latent_features(embed_id, doc_encoding), params_.kernel_weight,
                                        params_.kernel_bias);
    }

    /// Scores of every request as a [R] tensor. Per query term occurrence the
    /// variant's term score is formed; a request's score is their sum. With
    /// ctx.train and unfrozen statistics the batch supplies the BN/BS
    /// statistics and, if `update_stats`, the running estimates move toward it.
    Tensor<T> score_batch(std::span<const ScoreRequest<T>> requests, const Vocabulary& vocab,
                          const ForwardContext& ctx = {}, bool update_stats = true)
    {
        const bool batch_stats = ctx.train && !stats_.frozen;
        BatchMoments moments;
        auto scores = score_requests(requests, vocab, ctx, batch_stats, &moments);
        if (batch_stats && update_stats && moments.terms > 0) {
            if (config_.uses_explicit()) {
                blend(stats_.tf_mean, moments.tf_mean);
                blend(stats_.dlen_mean, moments.dlen_mean);
            }
            if (config_.variant == ModelVariant::ndrm3) {
                blend(stats_.latent_mean, moments.latent.mean);
                blend(stats_.latent_var, moments.latent.variance);
                blend(stats_.explicit_mean, moments.explicit_scores.mean);
                blend(stats_.explicit_var, moments.explicit_scores.variance);
            }
        }
        return scores;
    }

    /// Inference-only batch scoring with the stored statistics.
    [[nodiscard]] Tensor<T> score_batch_frozen(std::span<const ScoreRequest<T>> requests, const Vocabulary& vocab) const
    {
        return score_requests(requests, vocab, ForwardContext{}, false, nullptr);
    }

    /// Inference score of one query term against a document.
    [[nodiscard]] T term_score(std::uint32_t term, std::uint32_t embed_id, const DocumentRecord& doc,
                               const Tensor<T>* doc_encoding, const Vocabulary& vocab) const
    {
        QueryRecord q;
        q.terms = {term};
        q.embed_ids = {embed_id};
        const ScoreRequest<T> req{&q, &doc, doc_encoding};
        return score_batch_frozen(std::span<const ScoreRequest<T>>(&req, 1), vocab)[0];
    }

    /// Sum of independently computed term scores over the query's term occurrences.
    [[nodiscard]] T score_query_document(const QueryRecord& q, const DocumentRecord& d, const Vocabulary& vocab,
                                         const Tensor<T>* doc_encoding = nullptr) const
    {
        NoGradGuard guard;
        Tensor<T> local;
        if (config_.uses_latent() && !doc_encoding && !q.terms.empty()) {
            local = encode_document(d);
            doc_encoding = &local;
        }
        T total = 0;
        for (std::size_t i = 0; i < q.terms.size(); ++i) {
            total += term_score(q.terms[i], q.embed_ids[i], d, doc_encoding, vocab);
        }
        return total;
    }

    [[nodiscard]] Checkpoint to_checkpoint() const
    {
        Checkpoint ckpt;
        ckpt.config = config_.to_json();
        ckpt.config_hash = config_.hash();
        ckpt.frozen = stats_.frozen;
        for (const auto& [name, t] : named_parameters()) {
            ckpt.add(name, t);
        }
        const std::pair<const char*, double> stats[] = {
            {"stats.latent_mean", stats_.latent_mean},     {"stats.latent_var", stats_.latent_var},
            {"stats.explicit_mean", stats_.explicit_mean}, {"stats.explicit_var", stats_.explicit_var},
            {"stats.tf_mean", stats_.tf_mean},             {"stats.dlen_mean", stats_.dlen_mean},
        };
        for (const auto& [name, value] : stats) {
            ckpt.add(name, Tensor<float>::scalar(static_cast<float>(value)));
        }
        return ckpt;
    }

    static Model from_checkpoint(const Checkpoint& ckpt)
    {
        auto config = ModelConfig::from_json(ckpt.config);
        if (config.hash() != ckpt.config_hash) {
            throw FormatError("checkpoint: config hash mismatch");
        }
        Model model(config);
        for (auto& [name, t] : model.named_parameters()) {
            ckpt.restore(name, t);
        }
        auto stat = [&](const char* name) {
            Tensor<T> t({1});
            ckpt.restore(name, t);
            return static_cast<double>(t[0]);
        };
        model.stats_.latent_mean = stat("stats.latent_mean");
        model.stats_.latent_var = stat("stats.latent_var");
        model.stats_.explicit_mean = stat("stats.explicit_mean");
        model.stats_.explicit_var = stat("stats.explicit_var");
        model.stats_.tf_mean = stat("stats.tf_mean");
        model.stats_.dlen_mean = stat("stats.dlen_mean");
        model.stats_.frozen = ckpt.frozen;
        return model;
    }

    void save(const std::filesystem::path& path) const { to_checkpoint().save(path); }
    static Model load(const std::filesystem::path& path) { return from_checkpoint(Checkpoint::load(path)); }

  private:
    void require_latent(const char* op) const
    {
        if (!config_.uses_latent()) {
            throw ContractError(std::string(op) + ": variant " + to_string(config_.variant) + " has no encoder");
        }
    }

    void blend(double& running, double batch) const
    {
        running = config_.stats_momentum * running + (1.0 - config_.stats_momentum) * batch;
    }

    struct BatchMoments {
        std::size_t terms = 0;
        double tf_mean = 0.0;
        double dlen_mean = 0.0;
        MomentStats latent;
        MomentStats explicit_scores;
    };

    Tensor<T> score_requests(std::span<const ScoreRequest<T>> requests, const Vocabulary& vocab,
                             const ForwardContext& ctx, bool batch_stats, BatchMoments* moments) const
    {
        const std::size_t count = requests.size();
        std::vector<std::size_t> segment;
        std::vector<TermDocStats> explicit_inputs;
        std::vector<Tensor<T>> latent_parts;
        std::unordered_map<const DocumentRecord*, Tensor<T>> encodings;
        for (std::size_t r = 0; r < count; ++r) {
            const auto& req = requests[r];
            const Tensor<T>* enc = req.encoding;
            if (config_.uses_latent() && !enc && !req.query->terms.empty()) {
                auto it = encodings.find(req.doc);
                if (it == encodings.end()) {
                    it = encodings.emplace(req.doc, encode_document(*req.doc, ctx)).first;
                }
                enc = &it->second;
            }
            for (std::size_t i = 0; i < req.query->terms.size(); ++i) {
                segment.push_back(r);
                if (config_.uses_latent()) {
                    latent_parts.push_back(latent_term_score(req.query->embed_ids[i], *enc));
                }
                if (config_.uses_explicit()) {
                    const auto term = req.query->terms[i];
                    explicit_inputs.push_back({vocab.idf(term), static_cast<double>(req.doc->tf(term)),
                                               static_cast<double>(req.doc->length())});
                }
            }
        }
        if (segment.empty()) {
            return Tensor<T>({count});
        }

        Tensor<T> latent, explicit_scores;
        if (config_.uses_latent()) {
            latent = latent_parts.size() == 1 ? latent_parts[0] : concat(latent_parts, 0);
        }
        double tf_mean = stats_.tf_mean, dlen_mean = stats_.dlen_mean;
        if (config_.uses_explicit()) {
            if (batch_stats) {
                tf_mean = dlen_mean = 0;
                for (const auto& s : explicit_inputs) {
                    tf_mean += s.tf;
                    dlen_mean += s.dlen;
                }
                tf_mean /= static_cast<double>(explicit_inputs.size());
                dlen_mean /= static_cast<double>(explicit_inputs.size());
            }
            explicit_scores = explicit_term_scores<T>(explicit_inputs, params_.w_dlen, params_.b_dlen, tf_mean,
                                                      dlen_mean, config_.explicit_epsilon);
        }

        Tensor<T> terms;
        MomentStats latent_moments, explicit_moments;
        switch (config_.variant) {
        case ModelVariant::ndrm1:
            terms = latent;
            break;
        case ModelVariant::ndrm2:
            terms = explicit_scores;
            break;
        case ModelVariant::ndrm3: {
            terms = ndrm3_term_scores(latent, explicit_scores, params_.w1, params_.w2, params_.b,
                                      batch_stats ? nullptr : &stats_, config_.variance_floor, &latent_moments,
                                      &explicit_moments);
            break;
        }
        }

        if (moments) {
            moments->terms = segment.size();
            moments->tf_mean = tf_mean;
            moments->dlen_mean = dlen_mean;
            moments->latent = latent_moments;
            moments->explicit_scores = explicit_moments;
        }
        return segment_sum(terms, std::span<const std::size_t>(segment), count);
    }

    ModelConfig config_;
    ModelParams<T> params_;
    NormStats stats_;
    Tensor<T> positions_;
};

/// Loads `term v1 v2 ...` lines into the embedding rows of known terms,
/// truncating or zero-padding each vector to model_dim. Returns rows filled.
template <typename T>
std::size_t load_text_embeddings(std::istream& in, const Vocabulary& vocab, Model<T>& model)
{
    auto& table = model.params().embedding;
    if (!table.defined()) {
        throw ContractError("load_text_embeddings: model has no embedding table");
    }
    const std::size_t d = table.size(1);
    auto values = table.mutable_values();
    std::size_t filled = 0;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string term;
        if (!(fields >> term)) {
            continue;
        }
        const auto row = vocab.embed_id(vocab.term_id(term));
        if (row == 0 || row >= table.size(0)) {
            continue;
        }
        std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(row * d), d, T(0));
        double v = 0;
        for (std::size_t c = 0; c < d && fields >> v; ++c) {
            values[row * d + c] = static_cast<T>(v);
        }
        ++filled;
    }
    return filled;
}

}  // namespace ckqti
