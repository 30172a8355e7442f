// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ckqti/corpus.hpp"
#include "ckqti/eval.hpp"
#include "ckqti/ranking.hpp"

namespace ckqti {

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

/// Contribution of one query term occurrence.
inline double bm25_term_score(double idf, double tf, double doc_length, double mean_length, const Bm25Params& p)
{
    if (tf <= 0.0) {
        return 0.0;
    }
    const double norm = mean_length > 0 ? doc_length / mean_length : 1.0;
    return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

/// Sum over query term occurrences, so a repeated term counts repeatedly.
inline double bm25_score(const QueryRecord& q, const DocumentRecord& d, const Vocabulary& vocab,
                         const Bm25Params& p = {})
{
    double total = 0;
    for (auto t : q.terms) {
        if (t == kUnknownTerm) {
            continue;
        }
        total += bm25_term_score(vocab.idf(t), d.tf(t), static_cast<double>(d.length()), vocab.mean_document_length(),
                                 p);
    }
    return total;
}

/// Term-frequency postings for exhaustive BM25 retrieval.
class Bm25Index {
  public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    explicit Bm25Index(const Corpus& corpus) : corpus_(&corpus), postings_(corpus.vocab.size())
    {
        for (std::uint32_t d = 0; d < corpus.size(); ++d) {
            for (auto [term, tf] : corpus.documents[d].term_freqs) {
                postings_[term].push_back({d, tf});
            }
        }
    }

    [[nodiscard]] const std::vector<Posting>& postings(std::uint32_t term) const { return postings_.at(term); }

    [[nodiscard]] std::vector<ScoredDoc> retrieve(const QueryRecord& q, std::size_t k, const Bm25Params& p = {}) const
    {
        const auto& vocab = corpus_->vocab;
        std::vector<double> acc(corpus_->size(), 0.0);
        std::vector<bool> touched(corpus_->size(), false);
        std::vector<std::uint32_t> docs;
        for (auto t : q.terms) {
            if (t == kUnknownTerm) {
                continue;
            }
            const double idf = vocab.idf(t);
            for (const auto& posting : postings_[t]) {
                acc[posting.doc] += bm25_term_score(idf, posting.tf,
                                                    static_cast<double>(corpus_->documents[posting.doc].length()),
                                                    vocab.mean_document_length(), p);
                if (!touched[posting.doc]) {
                    touched[posting.doc] = true;
                    docs.push_back(posting.doc);
                }
            }
        }
        std::vector<ScoredDoc> scored;
        scored.reserve(docs.size());
        for (auto d : docs) {
            scored.push_back({d, acc[d]});
        }
        return top_k(std::move(scored), k);
    }

    [[nodiscard]] Run run(const std::vector<QueryRecord>& queries, std::size_t k, const Bm25Params& p = {}) const
    {
        Run out;
        for (const auto& q : queries) {
            out.rankings[q.id] = to_ranked(retrieve(q, k, p), *corpus_);
        }
        return out;
    }

  private:
    const Corpus* corpus_;
    std::vector<std::vector<Posting>> postings_;
};

struct Bm25Tuning {
    Bm25Params best;
    double best_value = -1.0;
};

/// Grid search maximizing a metric over the given tuning queries.
inline Bm25Tuning tune_bm25(const Bm25Index& index, const std::vector<QueryRecord>& queries, const Qrels& qrels,
                            Metric metric = Metric::ndcg, const EvalOptions& options = {},
                            const std::vector<double>& k1_grid = {0.3, 0.6, 0.9, 1.2, 1.5, 2.0},
                            const std::vector<double>& b_grid = {0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 1.0})
{
    Bm25Tuning tuning;
    for (double k1 : k1_grid) {
        for (double b : b_grid) {
            const Bm25Params p{k1, b};
            const double value = evaluate(index.run(queries, 100, p), qrels, metric, options).mean;
            if (value > tuning.best_value) {
                tuning.best_value = value;
                tuning.best = p;
            }
        }
    }
    return tuning;
}

}  // namespace ckqti
