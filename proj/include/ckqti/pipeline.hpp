// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "ckqti/bm25.hpp"
#include "ckqti/corpus.hpp"
#include "ckqti/impact_index.hpp"
#include "ckqti/model.hpp"

namespace ckqti {

inline std::vector<QueryRecord> make_queries(const std::vector<std::pair<std::string, std::string>>& texts,
                                             const Vocabulary& vocab)
{
    std::vector<QueryRecord> out;
    out.reserve(texts.size());
    for (const auto& [id, text] : texts) {
        out.push_back(make_query(id, text, vocab));
    }
    return out;
}

inline Run fullrank_run(const ImpactIndex& index, const std::vector<QueryRecord>& queries, std::size_t k = 100)
{
    Run run;
    for (const auto& q : queries) {
        run.rankings[q.id] = index.to_ranked(index.retrieve(q, k));
    }
    return run;
}

/// Reranks each query's candidate list; returns the number of unknown candidates skipped.
template <typename T>
Run rerank_run(const Model<T>& model, const Corpus& corpus, const std::vector<QueryRecord>& queries,
               const Run& candidates, std::size_t* skipped = nullptr)
{
    Run run;
    std::size_t missing = 0;
    for (const auto& q : queries) {
        auto it = candidates.rankings.find(q.id);
        if (it == candidates.rankings.end()) {
            continue;
        }
        std::vector<std::string> ids;
        for (const auto& r : it->second) {
            ids.push_back(r.docid);
        }
        auto result = rerank(q, std::span<const std::string>(ids), corpus, model);
        missing += result.skipped;
        run.rankings[q.id] = to_ranked(result.ranking, corpus);
    }
    if (skipped) {
        *skipped = missing;
    }
    return run;
}

}  // namespace ckqti
