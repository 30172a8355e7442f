// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ckqti/corpus.hpp"

namespace ckqti {

/// Topic-mixture collection: each document draws tokens from one or two
/// topic word lists and a Zipfian background; queries sample distinct
/// Zipf-weighted words from one topic.
struct SyntheticConfig {
    std::size_t documents = 5000;
    std::size_t vocabulary = 3000;
    std::size_t topics = 40;
    std::size_t words_per_topic = 40;
    std::size_t min_doc_length = 15;
    std::size_t max_doc_length = 45;
    double topic_share = 0.5;
    double secondary_topic_share = 0.3;
    std::size_t train_queries = 400;
    std::size_t test_queries = 100;
    std::size_t min_query_terms = 2;
    std::size_t max_query_terms = 4;
    std::uint64_t seed = 2026;
};

struct SyntheticCollection {
    RawCorpus corpus;
    std::vector<std::pair<std::string, std::string>> train_queries;
    std::vector<std::pair<std::string, std::string>> test_queries;
    /// Labels for every (query, document) pair with nonzero overlap.
    Qrels qrels;
    /// (qid, positive docid), one per training query with a grade-3 document.
    std::vector<std::pair<std::string, std::string>> triples;
};

/// floor(3 * sum over distinct query terms of min(tf, 2) / (2 * distinct terms)):
/// grade 3 needs every query term at least twice.
inline int overlap_label(const std::vector<std::string>& query, const std::vector<std::string>& doc)
{
    std::set<std::string_view> q(query.begin(), query.end());
    if (q.empty()) {
        return 0;
    }
    std::size_t credit = 0;
    for (auto t : q) {
        credit += std::min<std::size_t>(2, static_cast<std::size_t>(std::count(doc.begin(), doc.end(), t)));
    }
    return static_cast<int>(3 * credit / (2 * q.size()));
}

inline SyntheticCollection make_synthetic(const SyntheticConfig& c)
{
    if (c.topics * c.words_per_topic > c.vocabulary || c.topics == 0 || c.words_per_topic < c.max_query_terms ||
        c.min_doc_length == 0 || c.min_doc_length > c.max_doc_length || c.min_query_terms == 0 ||
        c.min_query_terms > c.max_query_terms) {
        throw ConfigError("synthetic: inconsistent configuration");
    }
    std::mt19937_64 rng(c.seed);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < c.vocabulary; ++i) {
        words.push_back("w" + std::to_string(i));
    }
    // Topic lists are disjoint random slices of the vocabulary.
    std::vector<std::size_t> perm(c.vocabulary);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> topic_words(c.topics);
    for (std::size_t t = 0; t < c.topics; ++t) {
        topic_words[t].assign(perm.begin() + static_cast<std::ptrdiff_t>(t * c.words_per_topic),
                              perm.begin() + static_cast<std::ptrdiff_t>((t + 1) * c.words_per_topic));
    }
    auto zipf = [](std::size_t n) {
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = 1.0 / static_cast<double>(i + 1);
        }
        return std::discrete_distribution<std::size_t>(w.begin(), w.end());
    };
    auto background = zipf(c.vocabulary);
    auto within_topic = zipf(c.words_per_topic);
    std::uniform_int_distribution<std::size_t> pick_topic(0, c.topics - 1);
    std::uniform_int_distribution<std::size_t> pick_length(c.min_doc_length, c.max_doc_length);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticCollection out;
    // Per document: (word, tf) sorted by word, for labelling.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> doc_tf;
    for (std::size_t d = 0; d < c.documents; ++d) {
        const auto primary = pick_topic(rng);
        const auto secondary = pick_topic(rng);
        const auto length = pick_length(rng);
        RawDocument doc{"D" + std::to_string(d), {}};
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < length; ++i) {
            std::size_t w = 0;
            if (unit(rng) < c.topic_share) {
                const auto topic = unit(rng) < c.secondary_topic_share ? secondary : primary;
                w = topic_words[topic][within_topic(rng)];
            } else {
                w = background(rng);
            }
            ids.push_back(w);
            doc.tokens.push_back(words[w]);
        }
        std::sort(ids.begin(), ids.end());
        auto& tf = doc_tf.emplace_back();
        for (std::size_t i = 0; i < ids.size();) {
            std::size_t j = i;
            while (j < ids.size() && ids[j] == ids[i]) {
                ++j;
            }
            tf.emplace_back(ids[i], j - i);
            i = j;
        }
        out.corpus.documents.push_back(std::move(doc));
    }
    out.corpus.stats.documents = out.corpus.documents.size();

    std::uniform_int_distribution<std::size_t> pick_qlen(c.min_query_terms, c.max_query_terms);
    auto make_queries = [&](std::size_t count, const std::string& prefix, bool training) {
        std::vector<std::pair<std::string, std::string>> queries;
        for (std::size_t qi = 0; qi < count; ++qi) {
            const auto topic = pick_topic(rng);
            const auto len = pick_qlen(rng);
            std::vector<std::size_t> terms;
            while (terms.size() < len) {
                const auto w = topic_words[topic][within_topic(rng)];
                if (std::find(terms.begin(), terms.end(), w) == terms.end()) {
                    terms.push_back(w);
                }
            }
            const std::string qid = prefix + std::to_string(qi);
            std::string text;
            for (auto t : terms) {
                text += (text.empty() ? "" : " ") + words[t];
            }
            std::vector<std::size_t> best;
            for (std::size_t d = 0; d < c.documents; ++d) {
                std::size_t credit = 0;
                for (auto t : terms) {
                    auto it = std::lower_bound(doc_tf[d].begin(), doc_tf[d].end(), std::make_pair(t, std::size_t{0}));
                    if (it != doc_tf[d].end() && it->first == t) {
                        credit += std::min<std::size_t>(2, it->second);
                    }
                }
                const int label = static_cast<int>(3 * credit / (2 * terms.size()));
                if (label > 0) {
                    out.qrels.add(qid, out.corpus.documents[d].id, label);
                }
                if (label == 3) {
                    best.push_back(d);
                }
            }
            if (training && !best.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, best.size() - 1);
                out.triples.emplace_back(qid, out.corpus.documents[best[pick(rng)]].id);
            }
            queries.emplace_back(qid, std::move(text));
        }
        return queries;
    };
    out.train_queries = make_queries(c.train_queries, "train", true);
    out.test_queries = make_queries(c.test_queries, "test", false);
    return out;
}

/// docs.tsv (id, empty url, title, body), queries.{train,test}.tsv, qrels.txt, triples.tsv.
/// Ingesting docs.tsv reproduces the generated token streams.
inline void write_synthetic(const SyntheticCollection& s, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    {
        auto out = detail::open_output(dir / "docs.tsv");
        for (const auto& d : s.corpus.documents) {
            const std::size_t title = std::min<std::size_t>(5, d.tokens.size());
            out << d.id << "\t\t";
            for (std::size_t i = 0; i < title; ++i) {
                out << (i ? " " : "") << d.tokens[i];
            }
            out << '\t';
            for (std::size_t i = title; i < d.tokens.size(); ++i) {
                out << (i > title ? " " : "") << d.tokens[i];
            }
            out << '\n';
        }
    }
    auto write_pairs = [&](const std::filesystem::path& path, const auto& pairs) {
        auto out = detail::open_output(path);
        for (const auto& [a, b] : pairs) {
            out << a << '\t' << b << '\n';
        }
    };
    write_pairs(dir / "queries.train.tsv", s.train_queries);
    write_pairs(dir / "queries.test.tsv", s.test_queries);
    write_pairs(dir / "triples.tsv", s.triples);
    auto qrels = detail::open_output(dir / "qrels.txt");
    s.qrels.write(qrels);
}

}  // namespace ckqti
