// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ckqti/attention.hpp"
#include "ckqti/gradcheck.hpp"
#include "ckqti/kernel_pooling.hpp"
#include "ckqti/model.hpp"
#include "ckqti/ops.hpp"
#include "ckqti/training.hpp"

namespace ckqti {

struct SelfCheck {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
    bool passed = false;
};

namespace detail {

template <typename Rng>
Tensor<double> uniform_tensor(Shape shape, Rng& rng, double lo, double hi)
{
    Tensor<double> t(std::move(shape), true);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.mutable_values()) {
        v = u(rng);
    }
    return t;
}

struct GradCase {
    std::string name;
    std::function<Tensor<double>()> f;
    std::vector<Tensor<double>> params;
};

/// Six documents over a nine-term vocabulary with three queries.
inline Corpus selftest_corpus()
{
    RawCorpus raw;
    raw.documents = {
        {"d0", {"apple", "banana", "apple", "cherry"}},
        {"d1", {"banana", "cherry", "date"}},
        {"d2", {"apple", "date", "egg", "fig", "x"}},
        {"d3", {"egg", "fig", "egg"}},
        {"d4", {"cherry", "apple", "banana", "banana", "fig", "y"}},
        {"d5", {"date", "egg"}},
    };
    return make_corpus(raw, 2);
}

inline ModelConfig selftest_model_config(ModelVariant variant, std::size_t rows)
{
    ModelConfig c;
    c.variant = variant;
    c.attention = AttentionConfig::with_dims(8, 2, 2, 3, 2);
    c.attention.dropout = 0.0;
    c.embedding_rows = rows;
    c.max_document_tokens = 64;
    c.head_init = 0.2;
    c.embedding_init = 0.5;
    c.seed = 11;
    return c;
}

}  // namespace detail

/// Central finite-difference checks in double precision over every
/// differentiable op, the attention and pooling composites, and the full
/// pairwise loss of each model variant (dropout off).
inline std::vector<SelfCheck> gradient_suite(double tolerance = 1e-3)
{
    using D = Tensor<double>;
    std::mt19937_64 rng(99);
    auto U = [&](Shape s, double lo, double hi) { return detail::uniform_tensor(std::move(s), rng, lo, hi); };

    auto a = U({3, 4}, 0.2, 1.5);
    auto b = U({3, 4}, 0.2, 1.5);
    auto s = U({1}, 0.5, 1.5);
    auto bias = U({4}, -1, 1);
    auto w = U({4, 6}, -1, 1);
    auto wb = U({6}, -1, 1);
    auto gamma = U({4}, 0.5, 1.5);
    auto beta = U({4}, -1, 1);
    auto q = U({3, 4}, -1, 1);
    auto table = U({5, 4}, -1, 1);
    auto mixed = U({3, 4}, -1, 1);
    auto kernel = U({4, 3, 2}, -1, 1);
    auto seq_q = U({5, 3}, -1, 1);
    auto seq_k = U({5, 3}, -1, 1);
    auto seq_v = U({5, 2}, -1, 1);
    auto qvec = U({4}, -1, 1);
    auto docm = U({6, 4}, -1, 1);
    auto row = U({7}, -0.9, 0.95);
    auto kw = U({KernelBank::kSize}, -0.5, 0.5);
    auto kb = U({1}, -0.5, 0.5);
    auto latent = U({6}, -2, 2);
    auto expl = U({6}, 0, 3);
    auto w_dlen = D::scalar(0.6, true);
    auto b_dlen = D::scalar(0.4, true);
    auto w1 = D::scalar(0.8, true);
    auto w2 = D::scalar(1.3, true);
    auto b3 = D::scalar(0.1, true);
    const std::vector<std::uint32_t> ids{1, 3, 0, 3};
    const std::vector<std::size_t> segs{0, 2, 1, 2, 0, 0, 1, 2, 2, 1, 0, 1};
    const std::vector<std::size_t> picks{3, 0, 3, 11, 7};
    const std::vector<TermDocStats> stats{{1.2, 1, 4}, {0.4, 3, 9}, {2.0, 2, 2}, {0.9, 5, 12}, {1.5, 1, 7}, {0.1, 2, 5}};
    std::mt19937_64 drop_rng(4);

    auto cfg = AttentionConfig::with_dims(4, 2, 2, 3, 1);
    cfg.dropout = 0.0;
    std::mt19937_64 init_rng(5);
    auto block = init_conformer<double>(cfg, init_rng);
    std::vector<D> block_params;
    for (auto& [name, t] : named_parameters(block, "")) {
        block_params.push_back(t);
    }
    auto with_input = [](std::vector<D> ps, const D& x) {
        ps.push_back(x);
        return ps;
    };

    std::vector<detail::GradCase> cases;
    // A fixed random projection makes every output element count.
    auto weighted = [&](std::function<D()> inner) {
        auto wt = std::make_shared<D>();
        auto proj_rng = std::make_shared<std::mt19937_64>(rng());
        return [inner, wt, proj_rng]() {
            auto out = inner();
            if (!wt->defined()) {
                *wt = detail::uniform_tensor(out.shape(), *proj_rng, -1, 1);
                wt->set_requires_grad(false);
            }
            return sum(mul(out, *wt));
        };
    };
    auto add_case = [&](std::string name, std::function<D()> f, std::vector<D> ps) {
        cases.push_back({std::move(name), weighted(std::move(f)), std::move(ps)});
    };
    add_case("add", [&] { return add(a, b); }, {a, b});
    add_case("sub", [&] { return sub(a, b); }, {a, b});
    add_case("mul", [&] { return mul(a, b); }, {a, b});
    add_case("div", [&] { return div(a, b); }, {a, b});
    add_case("scale", [&] { return scale(a, 1.7); }, {a});
    add_case("add_const", [&] { return add_const(a, 0.3); }, {a});
    add_case("mul_scalar", [&] { return mul_scalar(a, s); }, {a, s});
    add_case("add_scalar", [&] { return add_scalar(a, s); }, {a, s});
    add_case("add_bias", [&] { return add_bias(a, bias); }, {a, bias});
    add_case("relu", [&] { return relu(mixed); }, {mixed});
    add_case("exp", [&] { return exp(mixed); }, {mixed});
    add_case("log", [&] { return log(a); }, {a});
    add_case("softplus", [&] { return softplus(scale(mixed, 5.0)); }, {mixed});
    add_case("matmul", [&] { return matmul(a, w); }, {a, w});
    add_case("matmul_tn", [&] { return matmul_tn(a, b); }, {a, b});
    add_case("transpose", [&] { return transpose(a); }, {a});
    add_case("linear", [&] { return linear(a, w, wb); }, {a, w, wb});
    add_case("linear_cols", [&] { return linear_cols(a, w, wb, 2, 3); }, {a, w, wb});
    add_case("softmax0", [&] { return softmax(mixed, 0); }, {mixed});
    add_case("softmax1", [&] { return softmax(mixed, 1); }, {mixed});
    add_case("attention_probs", [&] { return attention_probs(q, mixed, 0.5); }, {q, mixed});
    add_case("grouped_conv1d", [&] { return grouped_conv1d(mixed, kernel, 2, 3); }, {mixed, kernel});
    add_case("layer_norm", [&] { return layer_norm(mixed, gamma, beta); }, {mixed, gamma, beta});
    add_case("dropout_eval", [&] { return dropout(mixed, 0.2, false, drop_rng); }, {mixed});
    add_case("embedding", [&] { return embedding(table, ids, 0u); }, {table});
    add_case("reshape", [&] { return reshape(a, Shape{4, 3}); }, {a});
    add_case("narrow", [&] { return narrow(a, 1, 1, 2); }, {a});
    add_case("concat", [&] { return concat(std::vector<D>{a, b}, 1); }, {a, b});
    add_case("stack", [&] { return stack(std::vector<D>{a, b}); }, {a, b});
    cases.push_back({"sum", [&] { return sum(mixed); }, {mixed}});
    cases.push_back({"mean", [&] { return mean(mixed); }, {mixed}});
    add_case("sum_axis", [&] { return sum_axis(mixed, 0); }, {mixed});
    add_case("max_axis", [&] { return max_axis(mixed, 1); }, {mixed});
    add_case("segment_sum", [&] { return segment_sum(reshape(mixed, Shape{12}), segs, 3); }, {mixed});
    add_case("gather", [&] { return gather(reshape(mixed, Shape{12}), picks); }, {mixed});
    add_case("batch_standardize", [&] { return batch_standardize(reshape(mixed, Shape{12}), 1e-5); }, {mixed});
    add_case("batch_standardize_floored", [&] { return batch_standardize(reshape(mixed, Shape{12}), 10.0); },
             {mixed});

    add_case("self_attention", [&] { return self_attention(seq_q, seq_k, seq_v); }, {seq_q, seq_k, seq_v});
    add_case("separable_self_attention", [&] { return separable_self_attention(seq_q, seq_k, seq_v); },
             {seq_q, seq_k, seq_v});
    for (auto variant : {AttentionVariant::standard, AttentionVariant::separable}) {
        add_case(std::string("conformer_block.") + to_string(variant),
                 [&, variant] { return conformer_block(docm, block, cfg, variant, ForwardContext{}); },
                 with_input(block_params, docm));
    }
    add_case("interaction_row", [&] { return interaction_row(qvec, docm); }, {qvec, docm});
    add_case("kernel_features", [&] { return kernel_features(row, KernelBank{}); }, {row});
    add_case("windowed_pool_term", [&] { return windowed_pool_term(row, WindowConfig{3, 2}, KernelBank{}); }, {row});
    add_case("latent_term_score", [&] { return latent_term_score(kernel_features(row, KernelBank{}), kw, kb); },
             {row, kw, kb});
    add_case("explicit_term_scores",
             [&] { return explicit_term_scores(std::span<const TermDocStats>(stats), w_dlen, b_dlen, 2.0, 6.0, 1e-6); },
             {w_dlen, b_dlen});
    add_case("ndrm3_term_scores.batch",
             [&] { return ndrm3_term_scores(latent, expl, w1, w2, b3, nullptr, 1e-5); }, {latent, expl, w1, w2, b3});
    NormStats running;
    running.latent_mean = 0.3;
    running.latent_var = 1.7;
    running.explicit_mean = 1.1;
    running.explicit_var = 0.6;
    add_case("ndrm3_term_scores.running",
             [&] { return ndrm3_term_scores(latent, expl, w1, w2, b3, &running, 1e-5); }, {latent, expl, w1, w2, b3});
    cases.push_back({"ranknet_loss",
                     [&] { return sum(ranknet_loss(latent, expl)); }, {latent, expl}});

    std::vector<SelfCheck> out;
    for (auto& c : cases) {
        auto r = finite_difference_check<double>(c.f, c.params);
        out.push_back({c.name, r.max_relative_error, r.checked, r.skipped_kinks,
                       r.checked > 0 && r.max_relative_error < tolerance});
    }

    // Full pairwise loss through embedding, encoder, pooling and head.
    const auto corpus = detail::selftest_corpus();
    std::vector<QueryRecord> queries{make_query("q0", "apple banana", corpus.vocab),
                                     make_query("q1", "egg fig", corpus.vocab),
                                     make_query("q2", "date cherry", corpus.vocab)};
    const std::vector<TrainPair> pairs = {{0, 0, 3}, {0, 4, 5}, {1, 3, 1}, {2, 1, 2}, {2, 5, 0}};
    for (auto variant : {ModelVariant::ndrm1, ModelVariant::ndrm2, ModelVariant::ndrm3}) {
        Model<double> model(detail::selftest_model_config(variant, corpus.vocab.embedding_rows()));
        std::mt19937_64 ctx_rng(0);
        const ForwardContext ctx{true, &ctx_rng};
        std::vector<D> params;
        for (auto& [name, t] : model.named_parameters()) {
            params.push_back(t);
        }
        auto r = finite_difference_check<double>(
            [&] {
                return pair_loss(model, corpus, std::span<const QueryRecord>(queries), std::span<const TrainPair>(pairs),
                                 ctx, false);
            },
            params);
        out.push_back({std::string("loss.") + to_string(variant), r.max_relative_error, r.checked, r.skipped_kinks,
                       r.checked > 0 && r.max_relative_error < tolerance});
    }
    return out;
}

/// Closed-form and dense-oracle spot checks of the forward computations.
inline std::vector<SelfCheck> oracle_suite()
{
    std::vector<SelfCheck> out;
    auto record = [&](std::string name, double err, std::size_t checked, double tol) {
        out.push_back({std::move(name), err, checked, 0, err <= tol});
    };

    // Separable attention against Phi(Q) (Phi(K)^T V) evaluated with plain loops.
    std::mt19937_64 rng(17);
    double worst = 0;
    for (std::size_t trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + trial * 3, dk = 3, dv = 2;
        auto q = detail::uniform_tensor({n, dk}, rng, -2, 2);
        auto k = detail::uniform_tensor({n, dk}, rng, -2, 2);
        auto v = detail::uniform_tensor({n, dv}, rng, -2, 2);
        NoGradGuard guard;
        auto got = separable_self_attention(q, k, v);
        std::vector<double> pq(n * dk), pk(n * dk);
        for (std::size_t i = 0; i < n; ++i) {
            double m = -1e300, z = 0;
            for (std::size_t c = 0; c < dk; ++c) m = std::max(m, q.values()[i * dk + c]);
            for (std::size_t c = 0; c < dk; ++c) z += std::exp(q.values()[i * dk + c] - m);
            for (std::size_t c = 0; c < dk; ++c) pq[i * dk + c] = std::exp(q.values()[i * dk + c] - m) / z;
        }
        for (std::size_t c = 0; c < dk; ++c) {
            double m = -1e300, z = 0;
            for (std::size_t i = 0; i < n; ++i) m = std::max(m, k.values()[i * dk + c]);
            for (std::size_t i = 0; i < n; ++i) z += std::exp(k.values()[i * dk + c] - m);
            for (std::size_t i = 0; i < n; ++i) pk[i * dk + c] = std::exp(k.values()[i * dk + c] - m) / z;
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t e = 0; e < dv; ++e) {
                double acc = 0;
                for (std::size_t c = 0; c < dk; ++c) {
                    double summary = 0;
                    for (std::size_t j = 0; j < n; ++j) summary += pk[j * dk + c] * v.values()[j * dv + e];
                    acc += pq[i * dk + c] * summary;
                }
                worst = std::max(worst, std::abs(acc - got.values()[i * dv + e]));
            }
        }
    }
    record("separable_attention_dense_oracle", worst, 20, 1e-10);

    const double hand = ndrm2_term_score({2.0, 3.0, 100.0}, 1.0, 0.0, 2.0, 200.0, 1e-6);
    const double tf_bs = 3.0 / (2.0 + 1e-6);
    const double len_bs = 100.0 / (200.0 + 1e-6);
    record("explicit_score_hand_value", std::abs(hand - 2.0 * tf_bs / (tf_bs + len_bs + 1e-6)), 1, 1e-12);
    record("explicit_score_zero_tf", std::abs(ndrm2_term_score({2.0, 0.0, 100.0}, 1.0, 0.0, 2.0, 200.0)), 1, 0.0);

    {
        NoGradGuard guard;
        auto x = Tensor<double>::from_vector({3}, std::vector<double>{1, 2, 3});
        auto p = softmax(x, 0);
        const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
        double err = 0;
        for (int i = 0; i < 3; ++i) {
            err = std::max(err, std::abs(p.values()[i] - std::exp(1.0 + i) / z));
        }
        record("softmax_oracle", err, 3, 1e-12);
    }

    const double rank = ranknet_loss(1.0, 0.0);
    record("ranknet_gap_one", std::abs(rank - std::log1p(std::exp(-1.0))), 1, 1e-15);
    return out;
}

}  // namespace ckqti
