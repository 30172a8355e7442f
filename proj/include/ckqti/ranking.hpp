// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ckqti/corpus.hpp"

namespace ckqti {

struct ScoredDoc {
    std::uint32_t doc = 0;
    double score = 0.0;
};

/// Higher score first, then lower document id.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b)
{
    return a.score != b.score ? a.score > b.score : a.doc < b.doc;
}

/// The best `k` entries in rank order.
inline std::vector<ScoredDoc> top_k(std::vector<ScoredDoc> scored, std::size_t k)
{
    if (scored.size() > k) {
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), ranks_before);
        scored.resize(k);
    } else {
        std::sort(scored.begin(), scored.end(), ranks_before);
    }
    return scored;
}

inline std::vector<RankedDoc> to_ranked(const std::vector<ScoredDoc>& scored, const Corpus& corpus)
{
    std::vector<RankedDoc> out;
    out.reserve(scored.size());
    for (const auto& s : scored) {
        out.push_back({corpus.documents[s.doc].id, s.score});
    }
    return out;
}

}  // namespace ckqti
