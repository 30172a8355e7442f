// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "ckqti/pipeline.hpp"
#include "ckqti/synthetic.hpp"

using namespace ckqti;

namespace {

SyntheticConfig small_config()
{
    SyntheticConfig c;
    c.documents = 400;
    c.vocabulary = 600;
    c.topics = 10;
    c.words_per_topic = 20;
    c.train_queries = 60;
    c.test_queries = 20;
    c.seed = 5;
    return c;
}

std::vector<std::string> words(std::string_view text) { return tokenize(text); }

TEST(OverlapLabel, HandValues)
{
    const std::vector<std::string> doc{"a", "b", "a", "c", "c", "c"};
    // credits: a=2, b=1, c=2 (capped)
    EXPECT_EQ(overlap_label({"a"}, doc), 3);
    EXPECT_EQ(overlap_label({"b"}, doc), 1);
    EXPECT_EQ(overlap_label({"z"}, doc), 0);
    EXPECT_EQ(overlap_label({"a", "b"}, doc), 2);        // 3*3/4
    EXPECT_EQ(overlap_label({"a", "c"}, doc), 3);        // 3*4/4
    EXPECT_EQ(overlap_label({"b", "z"}, doc), 0);        // 3*1/4
    EXPECT_EQ(overlap_label({"a", "b", "z"}, doc), 1);   // 3*3/6
    EXPECT_EQ(overlap_label({"a", "a", "b"}, doc), 2);   // duplicates collapse
    EXPECT_EQ(overlap_label({}, doc), 0);
}

TEST(Synthetic, QrelsMatchLabelOracle)
{
    const auto s = make_synthetic(small_config());
    ASSERT_EQ(s.corpus.documents.size(), 400u);
    for (const auto* queries : {&s.train_queries, &s.test_queries}) {
        for (const auto& [qid, text] : *queries) {
            const auto q = words(text);
            for (const auto& d : s.corpus.documents) {
                EXPECT_EQ(s.qrels.relevance(qid, d.id), overlap_label(q, d.tokens)) << qid << " " << d.id;
            }
        }
    }
}

TEST(Synthetic, TriplesArePerfectMatches)
{
    const auto s = make_synthetic(small_config());
    ASSERT_FALSE(s.triples.empty());
    std::map<std::string, std::string> text(s.train_queries.begin(), s.train_queries.end());
    for (const auto& [qid, doc] : s.triples) {
        ASSERT_TRUE(text.count(qid));
        EXPECT_EQ(s.qrels.relevance(qid, doc), 3);
    }
}

TEST(Synthetic, ShapeOfQueriesAndDocuments)
{
    const auto c = small_config();
    const auto s = make_synthetic(c);
    for (const auto& d : s.corpus.documents) {
        EXPECT_GE(d.tokens.size(), c.min_doc_length);
        EXPECT_LE(d.tokens.size(), c.max_doc_length);
    }
    for (const auto& [qid, text] : s.test_queries) {
        const auto q = words(text);
        EXPECT_GE(q.size(), c.min_query_terms);
        EXPECT_LE(q.size(), c.max_query_terms);
        EXPECT_EQ(std::set<std::string>(q.begin(), q.end()).size(), q.size());
    }
}

TEST(Synthetic, SeedDeterminesCollection)
{
    const auto a = make_synthetic(small_config());
    const auto b = make_synthetic(small_config());
    auto c_cfg = small_config();
    c_cfg.seed = 6;
    const auto c = make_synthetic(c_cfg);
    ASSERT_EQ(a.corpus.documents.size(), b.corpus.documents.size());
    for (std::size_t i = 0; i < a.corpus.documents.size(); ++i) {
        EXPECT_EQ(a.corpus.documents[i].tokens, b.corpus.documents[i].tokens);
    }
    EXPECT_EQ(a.test_queries, b.test_queries);
    EXPECT_EQ(a.triples, b.triples);
    EXPECT_NE(a.test_queries, c.test_queries);
}

TEST(Synthetic, RejectsInconsistentConfig)
{
    auto c = small_config();
    c.topics = 100;  // 100 * 20 > 600 words
    EXPECT_THROW(make_synthetic(c), ConfigError);
    c = small_config();
    c.min_doc_length = 50;
    c.max_doc_length = 10;
    EXPECT_THROW(make_synthetic(c), ConfigError);
}

TEST(Synthetic, WrittenFilesIngestBack)
{
    const auto s = make_synthetic(small_config());
    const auto dir = std::filesystem::temp_directory_path() / "ckqti_synthetic_test";
    std::filesystem::remove_all(dir);
    write_synthetic(s, dir);
    const auto raw = ingest_corpus(dir / "docs.tsv");
    ASSERT_EQ(raw.documents.size(), s.corpus.documents.size());
    EXPECT_EQ(raw.stats.malformed_lines, 0u);
    for (std::size_t i = 0; i < raw.documents.size(); ++i) {
        EXPECT_EQ(raw.documents[i].id, s.corpus.documents[i].id);
        EXPECT_EQ(raw.documents[i].tokens, s.corpus.documents[i].tokens);
    }
    auto in = detail::open_input(dir / "queries.test.tsv");
    EXPECT_EQ(read_query_texts(in), s.test_queries);
    EXPECT_EQ(read_training_triples(dir / "triples.tsv"), s.triples);
    const auto qrels = Qrels::read(dir / "qrels.txt");
    EXPECT_EQ(qrels.all(), s.qrels.all());
    std::filesystem::remove_all(dir);
}

TEST(Pipeline, FullrankAndRerankRuns)
{
    const auto s = make_synthetic(small_config());
    const auto corpus = make_corpus(s.corpus, 2);
    Model<float> model(desk_model_config(ModelVariant::ndrm2, corpus.vocab.embedding_rows()));
    model.stats().tf_mean = 1.3;
    model.stats().dlen_mean = 30.0;
    model.freeze();
    const auto index = build_index(corpus, model);
    const auto queries = make_queries(s.test_queries, corpus.vocab);
    ASSERT_EQ(queries.size(), s.test_queries.size());

    const auto full = fullrank_run(index, queries, 10);
    for (const auto& q : queries) {
        const auto expected = index.to_ranked(index.retrieve(q, 10));
        ASSERT_TRUE(full.rankings.count(q.id));
        ASSERT_EQ(full.rankings.at(q.id).size(), expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            EXPECT_EQ(full.rankings.at(q.id)[i].docid, expected[i].docid);
        }
    }

    auto candidates = full;
    candidates.rankings[queries[0].id].push_back({"no-such-doc", 0.0});
    std::size_t skipped = 0;
    const auto reranked = rerank_run(model, corpus, queries, candidates, &skipped);
    EXPECT_EQ(skipped, 1u);
    // The explicit model scores contained terms only, so a rerank of its own
    // fullrank list keeps the same documents in the same order.
    for (const auto& q : queries) {
        const auto& a = full.rankings.at(q.id);
        const auto& b = reranked.rankings.at(q.id);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].docid, b[i].docid);
            EXPECT_NEAR(a[i].score, b[i].score, 1e-4);
        }
    }
}

}  // namespace
