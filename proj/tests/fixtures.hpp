// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ckqti/corpus.hpp"
#include "ckqti/model.hpp"

namespace ckqti::testing {

/// Six short documents over a nine-term vocabulary; "x" and "y" occur once.
inline Corpus tiny_corpus()
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

/// Eight-dimensional model without dropout, small enough for exhaustive
/// finite-difference checks.
inline ModelConfig tiny_config(ModelVariant variant, std::size_t rows, std::size_t layers = 1)
{
    ModelConfig c;
    c.variant = variant;
    c.attention = AttentionConfig::with_dims(8, 2, 2, 3, layers);
    c.attention.dropout = 0.0;
    c.embedding_rows = rows;
    c.max_document_tokens = 64;
    c.head_init = 0.2;
    c.embedding_init = 0.5;
    c.seed = 11;
    return c;
}

}  // namespace ckqti::testing
