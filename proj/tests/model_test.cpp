// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ckqti/gradcheck.hpp"
#include "ckqti/model.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace ckqti;
using namespace ckqti::testing;

namespace {

using D = Tensor<double>;
using ModelD = Model<double>;
using Strings = std::vector<std::string>;

QueryRecord query(const Corpus& c, const std::string& text) { return make_query("q", text, c.vocab); }

TEST(ModelConfig, JsonRoundTripAndValidation)
{
    auto c = desk_model_config(ModelVariant::ndrm1, 77);
    c.window = {50, 25};
    auto back = ModelConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.hash(), c.hash());
    auto d = c;
    d.seed += 1;
    EXPECT_NE(d.hash(), c.hash());

    auto overlay = ModelConfig::from_json(nlohmann::json::parse(R"({"variant": "ndrm2", "attention": {"dropout": 0}})"), c);
    EXPECT_EQ(overlay.variant, ModelVariant::ndrm2);
    EXPECT_EQ(overlay.attention.dropout, 0.0);
    EXPECT_EQ(overlay.attention.model_dim, 32u);
    EXPECT_THROW(ModelConfig::from_json(nlohmann::json::parse(R"({"modeldim": 3})")), ConfigError);
    EXPECT_THROW(ModelConfig::from_json(nlohmann::json::parse(R"({"variant": "ndrm4"})")), ConfigError);
    auto bad = c;
    bad.attention.num_heads = 5;
    EXPECT_THROW(ModelD{bad}, ConfigError);
}

TEST(Encoder, ShapesAndDeterminism)
{
    auto corpus = tiny_corpus();
    {
        ModelD model(desk_model_config(ModelVariant::ndrm1, corpus.vocab.embedding_rows()));
        std::vector<std::uint32_t> one{1};
        EXPECT_EQ(model.encode_document(one).shape(), (Shape{1, 32}));
        EXPECT_THROW(model.encode_document(std::vector<std::uint32_t>{}), ContractError);
    }
    {
        ModelConfig full;
        full.variant = ModelVariant::ndrm1;
        full.embedding_rows = 3;
        full.attention.dropout = 0.0;
        Model<float> model(full);
        std::vector<std::uint32_t> one{2};
        EXPECT_EQ(model.encode_document(one).shape(), (Shape{1, 256}));
    }
    auto c = tiny_config(ModelVariant::ndrm1, 3);
    c.max_document_tokens = 4000;
    ModelD model(c);
    std::vector<std::uint32_t> ids(4000);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i % 3);
    NoGradGuard guard;
    auto a = model.encode_document(ids);
    EXPECT_EQ(a.shape(), (Shape{4000, 8}));
    EXPECT_EQ(a.to_vector(), model.encode_document(ids).to_vector());
    ids.push_back(1);
    EXPECT_THROW(model.encode_document(ids), ContractError);
}

TEST(Encoder, GradientReachesEmbeddingTable)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(ModelVariant::ndrm1, corpus.vocab.embedding_rows()));
    std::vector<std::uint32_t> ids{1, 2, 1, 3, 0};
    std::mt19937_64 rng(3);
    auto w = random_tensor<double>({5, 8}, rng);
    auto report = finite_difference_check<double>([&] { return sum(mul(model.encode_document(ids), w)); },
                                                  {model.params().embedding});
    EXPECT_GT(report.checked, 0u);
    EXPECT_LT(report.max_relative_error, 1e-3);
    // The OOV row never receives gradient.
    backward(sum(mul(model.encode_document(ids), w)));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(model.params().embedding.grad()[c], 0.0);
}

TEST(QueryTerm, TableRowLookupAndOov)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(ModelVariant::ndrm1, corpus.vocab.embedding_rows()));
    const auto& table = model.params().embedding;
    for (std::uint32_t row = 0; row < table.size(0); ++row) {
        auto v = model.encode_query_term(row);
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(v[c], table.at(row, c));
    }
    for (double v : model.encode_query_term(0).to_vector()) EXPECT_EQ(v, 0.0);
    NoGradGuard guard;
    auto enc = model.encode_document(corpus.documents[0]);
    auto f = model.latent_features(0, enc);
    for (double v : f.to_vector()) EXPECT_DOUBLE_EQ(v, std::log(1e-10));
}

TEST(Ndrm1, ZeroHeadGivesZeroAndScoresAreLocal)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(ModelVariant::ndrm1, corpus.vocab.embedding_rows()));
    const auto& d = corpus.documents[4];
    auto alone = model.score_query_document(query(corpus, "banana"), d, corpus.vocab);
    auto with_other = model.score_query_document(query(corpus, "banana fig"), d, corpus.vocab);
    auto other = model.score_query_document(query(corpus, "fig"), d, corpus.vocab);
    EXPECT_EQ(with_other, alone + other);

    for (auto& v : model.params().kernel_weight.mutable_values()) v = 0.0;
    for (const auto& doc : corpus.documents)
        EXPECT_EQ(model.score_query_document(query(corpus, "apple egg zz"), doc, corpus.vocab), 0.0);
}

TEST(Ndrm1, ComposedOracleOnThreeTokenDocument)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(ModelVariant::ndrm1, corpus.vocab.embedding_rows()));
    auto& p = model.params();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& v : p.kernel_weight.mutable_values()) v = u(rng);
    p.kernel_bias.mutable_values()[0] = 0.3;
    DocumentRecord doc = make_document("d", Strings{"apple", "banana", "cherry"}, corpus.vocab);
    ASSERT_EQ(doc.embed_ids.size(), 3u);
    const std::uint32_t term = corpus.vocab.term_id("banana");
    const std::uint32_t row = corpus.vocab.embed_id(term);

    NoGradGuard guard;
    auto enc = model.encode_document(doc);
    // Independent evaluation of cosine, kernels, log-sum and the linear head.
    const KernelBank bank;
    std::vector<double> cos(3);
    for (std::size_t j = 0; j < 3; ++j) {
        double dot = 0, qn = 0, dn = 0;
        for (std::size_t c = 0; c < 8; ++c) {
            const double q = p.embedding.at(row, c), x = enc.at(j, c);
            dot += q * x;
            qn += q * q;
            dn += x * x;
        }
        cos[j] = dot / std::sqrt(qn * dn);
    }
    double expected = 0.3;
    for (std::size_t k = 0; k < bank.size(); ++k) {
        double s = 0;
        for (double c : cos) s += std::exp(-(c - bank.mus[k]) * (c - bank.mus[k]) / (2 * bank.sigmas[k] * bank.sigmas[k]));
        expected += p.kernel_weight[k] * std::log(1e-10 + s);
    }
    EXPECT_NEAR(model.score_query_document(query(corpus, "banana"), doc, corpus.vocab), expected, 1e-5);
}

TEST(Ndrm2, HandComputedExample)
{
    const TermDocStats s{2.0, 3.0, 100.0};
    const double got = ndrm2_term_score(s, 1.0, 0.0, 2.0, 200.0, 1e-6);
    // 2 * bs_tf / (bs_tf + bs_dlen + eps) with bs_x = x / (mean + eps).
    const double bs_tf = 3.0 / (2.0 + 1e-6), bs_dlen = 100.0 / (200.0 + 1e-6);
    EXPECT_NEAR(got, 2.0 * bs_tf / (bs_tf + bs_dlen + 1e-6), 1e-15);
    EXPECT_NEAR(got, 1.49999925, 1e-6);

    auto w = D::scalar(1.0), b = D::scalar(0.0);
    auto t = explicit_term_scores<double>(std::vector<TermDocStats>{s}, w, b, 2.0, 200.0, 1e-6);
    EXPECT_NEAR(t.item(), got, 1e-15);
    EXPECT_EQ(ndrm2_term_score({2.0, 0.0, 100.0}, 1.0, 0.0, 2.0, 200.0), 0.0);
    EXPECT_NEAR(ndrm2_term_score({2.0, 1e6, 100.0}, 0.0, 0.0, 2.0, 200.0), 2.0, 1e-6);
}

TEST(Ndrm2, BoundedAndMonotoneInTf)
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const double idf = 3 * u(rng), dlen = 1 + 500 * u(rng), tf_mean = 0.1 + 3 * u(rng),
                     dlen_mean = 10 + 300 * u(rng), w = 2 * u(rng) - 0.5, b = 2 * u(rng) - 0.5;
        double prev = -1;
        for (int i = 0; i < 1000; ++i) {
            const double tf = 0.05 * i;
            const double s = ndrm2_term_score({idf, tf, dlen}, w, b, tf_mean, dlen_mean);
            const double bs = tf / (tf_mean + 1e-6);
            EXPECT_GE(s, 0.0);
            EXPECT_LE(s, idf * bs / (bs + 1e-6) + 1e-12);
            EXPECT_GE(s, prev);
            prev = s;
        }
    }
}

TEST(Ndrm3, BatchNormExample)
{
    auto latent = D::from_vector({2}, std::vector<double>{1, 3});
    auto explicit_scores = D::from_vector({2}, std::vector<double>{0, 0});
    auto one = D::scalar(1.0), zero = D::scalar(0.0);
    MomentStats lm, em;
    auto s = ndrm3_term_scores(latent, explicit_scores, one, one, zero, nullptr, 1e-5, &lm, &em);
    EXPECT_NEAR(s[0], -1.0, 1e-12);
    EXPECT_NEAR(s[1], 1.0, 1e-12);
    EXPECT_EQ(lm.mean, 2.0);
    EXPECT_EQ(lm.variance, 1.0);
    EXPECT_EQ(em.variance, 0.0);

    auto b = D::scalar(0.7);
    auto constant = ndrm3_term_scores(latent, explicit_scores, zero, zero, b, nullptr, 1e-5);
    for (double v : constant.to_vector()) EXPECT_EQ(v, 0.7);
}

TEST(Ndrm3, LatentOnlyWeightPreservesLatentOrder)
{
    std::mt19937_64 rng(7);
    auto latent = random_tensor<double>({50}, rng, -5, 5);
    auto explicit_scores = random_tensor<double>({50}, rng, 0, 3);
    NormStats running{0.4, 2.5, 1.0, 0.3, 1, 1, true};
    auto s = ndrm3_term_scores(latent, explicit_scores, D::scalar(0.8), D::scalar(0.0), D::scalar(-1.0), &running,
                               1e-5);
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 50; ++j)
            if (latent[i] < latent[j]) {
                EXPECT_LT(s[i], s[j]);
            }
}

class AllVariants : public ::testing::TestWithParam<ModelVariant> {};

TEST_P(AllVariants, QtiDecompositionIsExact)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(GetParam(), corpus.vocab.embedding_rows()));
    model.stats() = NormStats{0.2, 1.7, 0.4, 0.9, 0.7, 4.0, true};
    const auto q = query(corpus, "apple fig zz apple");
    for (const auto& doc : corpus.documents) {
        const double direct = model.score_query_document(q, doc, corpus.vocab);
        double sum_terms = 0;
        for (std::size_t i = 0; i < q.terms.size(); ++i) {
            sum_terms += model.score_query_document(
                QueryRecord{"t", {q.terms[i]}, {q.embed_ids[i]}}, doc, corpus.vocab);
        }
        EXPECT_EQ(direct, sum_terms);
        const ScoreRequest<double> req{&q, &doc, nullptr};
        NoGradGuard guard;
        EXPECT_EQ(model.score_batch_frozen(std::span(&req, 1), corpus.vocab)[0], direct);
    }
}

TEST_P(AllVariants, MultisetPermutationAndEmptyQuery)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(GetParam(), corpus.vocab.embedding_rows()));
    model.freeze();
    const auto& d = corpus.documents[0];
    const double a = model.score_query_document(query(corpus, "apple"), d, corpus.vocab);
    EXPECT_DOUBLE_EQ(model.score_query_document(query(corpus, "apple apple"), d, corpus.vocab), 2 * a);
    EXPECT_DOUBLE_EQ(model.score_query_document(query(corpus, "apple cherry date"), d, corpus.vocab),
                     model.score_query_document(query(corpus, "date apple cherry"), d, corpus.vocab));
    EXPECT_EQ(model.score_query_document(query(corpus, ""), d, corpus.vocab), 0.0);
    EXPECT_EQ(model.score_query_document(query(corpus, "cherry"), d, corpus.vocab),
              model.score_query_document(query(corpus, "cherry"), d, corpus.vocab));
}

TEST_P(AllVariants, CheckpointRoundTripIsBitExact)
{
    auto corpus = tiny_corpus();
    Model<float> model(tiny_config(GetParam(), corpus.vocab.embedding_rows()));
    model.stats() = NormStats{0.25f, 1.5f, -0.5f, 2.0f, 0.75f, 3.5f, true};
    std::stringstream buf;
    model.to_checkpoint().write(buf);
    auto back = Model<float>::from_checkpoint(Checkpoint::read(buf));
    auto a = model.named_parameters(), b = back.named_parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].first, b[i].first);
        EXPECT_EQ(a[i].second.to_vector(), b[i].second.to_vector()) << a[i].first;
    }
    EXPECT_EQ(back.stats().dlen_mean, 3.5);
    EXPECT_TRUE(back.stats().frozen);
    const auto q = query(corpus, "banana egg");
    for (const auto& doc : corpus.documents)
        EXPECT_EQ(model.score_query_document(q, doc, corpus.vocab), back.score_query_document(q, doc, corpus.vocab));

    std::stringstream again;
    back.to_checkpoint().write(again);
    std::stringstream first;
    model.to_checkpoint().write(first);
    EXPECT_EQ(first.str(), again.str());
}

INSTANTIATE_TEST_SUITE_P(Variants, AllVariants,
                         ::testing::Values(ModelVariant::ndrm1, ModelVariant::ndrm2, ModelVariant::ndrm3),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Checkpoint, RejectsCorruptInput)
{
    auto corpus = tiny_corpus();
    Model<float> model(tiny_config(ModelVariant::ndrm2, corpus.vocab.embedding_rows()));
    auto ckpt = model.to_checkpoint();
    ckpt.config_hash ^= 1;
    EXPECT_THROW(Model<float>::from_checkpoint(ckpt), FormatError);
    std::stringstream buf;
    model.to_checkpoint().write(buf);
    auto bytes = buf.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(Checkpoint::read(truncated), FormatError);
    std::istringstream garbage("NOTACKPT....");
    EXPECT_THROW(Checkpoint::read(garbage), FormatError);
}

TEST(Training, BatchStatisticsUpdateRunningEstimates)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(ModelVariant::ndrm3, corpus.vocab.embedding_rows()));
    const auto q = query(corpus, "apple egg");
    std::vector<ScoreRequest<double>> reqs;
    for (const auto& d : corpus.documents) reqs.push_back({&q, &d, nullptr});
    const NormStats before = model.stats();
    model.score_batch(reqs, corpus.vocab, ForwardContext{true, nullptr});
    EXPECT_NE(model.stats().latent_mean, before.latent_mean);
    EXPECT_NE(model.stats().tf_mean, before.tf_mean);
    // Mean TF over the 12 occurrences is 8/12; one step of momentum 0.9 from 1.
    EXPECT_NEAR(model.stats().tf_mean, 0.9 * 1.0 + 0.1 * (8.0 / 12.0), 1e-12);
    model.freeze();
    const NormStats frozen = model.stats();
    model.score_batch(reqs, corpus.vocab, ForwardContext{true, nullptr});
    EXPECT_EQ(model.stats().latent_mean, frozen.latent_mean);
}

TEST(Embeddings, TextLoaderTruncatesAndPads)
{
    auto corpus = tiny_corpus();
    ModelD model(tiny_config(ModelVariant::ndrm1, corpus.vocab.embedding_rows()));
    std::istringstream in("banana 1 2 3 4 5 6 7 8 9 10\napple 0.5 0.25\nunknownterm 1 1\nx 9 9\n");
    EXPECT_EQ(load_text_embeddings(in, corpus.vocab, model), 2u);
    const auto& t = model.params().embedding;
    const auto banana = corpus.vocab.embed_id(corpus.vocab.term_id("banana"));
    const auto apple = corpus.vocab.embed_id(corpus.vocab.term_id("apple"));
    EXPECT_EQ(t.at(banana, 7), 8.0);
    EXPECT_EQ(t.at(apple, 1), 0.25);
    EXPECT_EQ(t.at(apple, 2), 0.0);
}

}  // namespace
