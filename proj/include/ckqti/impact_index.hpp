// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ckqti/binary_io.hpp"
#include "ckqti/corpus.hpp"
#include "ckqti/model.hpp"
#include "ckqti/ranking.hpp"

namespace ckqti {

struct Posting {
    std::uint32_t doc = 0;
    float score = 0.0f;

    friend bool operator==(const Posting&, const Posting&) = default;
};

struct RetrievalResult {
    std::vector<ScoredDoc> ranking;
    /// Candidates that were not in the corpus (rerank only).
    std::size_t skipped = 0;
};

/// Inverted index of precomputed term-document scores. Postings exist only
/// for terms that occur in the document.
class ImpactIndex {
  public:
    static constexpr std::uint32_t kVersion = 1;

    ImpactIndex() = default;

    [[nodiscard]] ModelVariant variant() const { return variant_; }
    [[nodiscard]] std::uint64_t config_hash() const { return config_hash_; }
    [[nodiscard]] std::size_t doc_count() const { return doc_ids_.size(); }
    [[nodiscard]] const Vocabulary& vocab() const { return vocab_; }
    [[nodiscard]] const NormStats& stats() const { return stats_; }
    [[nodiscard]] const std::string& doc_id(std::uint32_t doc) const { return doc_ids_.at(doc); }
    [[nodiscard]] std::size_t posting_count() const
    {
        std::size_t n = 0;
        for (const auto& list : postings_) {
            n += list.size();
        }
        return n;
    }

    /// Empty for unknown or out-of-range terms.
    [[nodiscard]] std::span<const Posting> postings(std::uint32_t term) const
    {
        if (term >= postings_.size()) {
            return {};
        }
        return postings_[term];
    }

    void require_hash(std::uint64_t model_hash) const
    {
        if (model_hash != config_hash_) {
            throw ContractError("impact index: model config hash does not match the index");
        }
    }

    /// Term-at-a-time sum over query term occurrences, best `k` by total.
    [[nodiscard]] RetrievalResult retrieve(const QueryRecord& q, std::size_t k = 100) const
    {
        std::vector<double> acc(doc_count(), 0.0);
        std::vector<std::uint8_t> seen(doc_count(), 0);
        std::vector<std::uint32_t> touched;
        for (auto term : q.terms) {
            for (const auto& p : postings(term)) {
                if (!seen[p.doc]) {
                    seen[p.doc] = 1;
                    touched.push_back(p.doc);
                }
                acc[p.doc] += static_cast<double>(p.score);
            }
        }
        std::vector<ScoredDoc> scored;
        scored.reserve(touched.size());
        for (auto d : touched) {
            scored.push_back({d, acc[d]});
        }
        return {top_k(std::move(scored), k), 0};
    }

    [[nodiscard]] RetrievalResult retrieve(const QueryRecord& q, std::size_t k, std::uint64_t model_hash) const
    {
        require_hash(model_hash);
        return retrieve(q, k);
    }

    [[nodiscard]] std::vector<RankedDoc> to_ranked(const RetrievalResult& r) const
    {
        std::vector<RankedDoc> out;
        out.reserve(r.ranking.size());
        for (const auto& s : r.ranking) {
            out.push_back({doc_ids_[s.doc], s.score});
        }
        return out;
    }

    /// Header, vocabulary, document ids, statistics, dictionary, postings.
    void write(std::ostream& out) const
    {
        out.write("CKQTIIDX", 8);
        io::put_le(out, kVersion);
        io::put_le(out, static_cast<std::uint32_t>(variant_));
        io::put_le(out, static_cast<std::uint64_t>(doc_ids_.size()));
        io::put_le(out, config_hash_);
        io::put_le(out, static_cast<std::uint64_t>(postings_.size()));
        std::ostringstream vocab_text;
        vocab_.save(vocab_text);
        io::put_string(out, vocab_text.str());
        for (const auto& id : doc_ids_) {
            io::put_string(out, id);
        }
        for (double v : stats_values()) {
            io::put_le(out, std::bit_cast<std::uint64_t>(v));
        }

        std::vector<std::string> blocks;
        blocks.reserve(postings_.size());
        std::uint64_t offset = 0;
        for (const auto& list : postings_) {
            std::ostringstream block;
            std::uint32_t previous = 0;
            for (const auto& p : list) {
                io::put_varint(block, p.doc - previous);
                previous = p.doc;
            }
            for (const auto& p : list) {
                io::put_f32(block, p.score);
            }
            io::put_le(out, offset);
            io::put_le(out, static_cast<std::uint32_t>(list.size()));
            blocks.push_back(block.str());
            offset += blocks.back().size();
        }
        io::put_le(out, offset);
        for (const auto& b : blocks) {
            out.write(b.data(), static_cast<std::streamsize>(b.size()));
        }
        if (!out) {
            throw Error("impact index: write failed");
        }
    }

    static ImpactIndex read(std::istream& in)
    {
        io::expect_magic(in, "CKQTIIDX", "impact index");
        const auto version = io::get_le<std::uint32_t>(in, "index version");
        if (version != kVersion) {
            throw FormatError("impact index: unsupported version " + std::to_string(version));
        }
        ImpactIndex index;
        const auto variant = io::get_le<std::uint32_t>(in, "index variant");
        if (variant > static_cast<std::uint32_t>(ModelVariant::ndrm3)) {
            throw FormatError("impact index: bad variant");
        }
        index.variant_ = static_cast<ModelVariant>(variant);
        const auto docs = io::get_le<std::uint64_t>(in, "index doc count");
        index.config_hash_ = io::get_le<std::uint64_t>(in, "index config hash");
        const auto terms = io::get_le<std::uint64_t>(in, "index term count");
        std::istringstream vocab_text(io::get_string(in, "index vocabulary"));
        index.vocab_ = Vocabulary::load(vocab_text);
        if (index.vocab_.size() != terms) {
            throw FormatError("impact index: vocabulary size does not match the header");
        }
        for (std::uint64_t d = 0; d < docs; ++d) {
            index.doc_ids_.push_back(io::get_string(in, "index document id"));
        }
        double stats[6];
        for (double& v : stats) {
            v = std::bit_cast<double>(io::get_le<std::uint64_t>(in, "index statistics"));
        }
        index.set_stats(stats);

        std::vector<std::pair<std::uint64_t, std::uint32_t>> dictionary(terms);
        for (auto& [offset, count] : dictionary) {
            offset = io::get_le<std::uint64_t>(in, "index dictionary");
            count = io::get_le<std::uint32_t>(in, "index dictionary");
        }
        const auto total = io::get_le<std::uint64_t>(in, "index postings size");
        std::vector<unsigned char> bytes(total);
        if (total && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total))) {
            throw FormatError("impact index: truncated postings");
        }
        index.postings_.resize(terms);
        for (std::size_t t = 0; t < terms; ++t) {
            const auto [offset, count] = dictionary[t];
            const std::uint64_t end_offset = t + 1 < terms ? dictionary[t + 1].first : total;
            if (offset > end_offset || end_offset > total) {
                throw FormatError("impact index: bad dictionary offsets");
            }
            const unsigned char* p = bytes.data() + offset;
            const unsigned char* end = bytes.data() + end_offset;
            auto& list = index.postings_[t];
            list.resize(count);
            std::uint64_t doc = 0;
            for (std::uint32_t i = 0; i < count; ++i) {
                const auto delta = io::get_varint(p, end);
                if (i > 0 && delta == 0) {
                    throw FormatError("impact index: duplicate posting");
                }
                doc += delta;
                if (doc >= docs) {
                    throw FormatError("impact index: posting document out of range");
                }
                list[i].doc = static_cast<std::uint32_t>(doc);
            }
            if (static_cast<std::size_t>(end - p) != 4u * count) {
                throw FormatError("impact index: posting block size mismatch");
            }
            for (std::uint32_t i = 0; i < count; ++i) {
                std::uint32_t raw = 0;
                for (int b = 0; b < 4; ++b) {
                    raw |= static_cast<std::uint32_t>(*p++) << (8 * b);
                }
                list[i].score = std::bit_cast<float>(raw);
            }
        }
        return index;
    }

    void save(const std::filesystem::path& path) const
    {
        auto out = detail::open_output(path);
        write(out);
    }

    static ImpactIndex load(const std::filesystem::path& path)
    {
        auto in = detail::open_input(path);
        return read(in);
    }

    friend bool operator==(const ImpactIndex& a, const ImpactIndex& b)
    {
        return a.variant_ == b.variant_ && a.config_hash_ == b.config_hash_ && a.doc_ids_ == b.doc_ids_ &&
               a.stats_values() == b.stats_values() && a.postings_ == b.postings_;
    }

    /// Assembles an index; postings must be sorted by document and duplicate-free.
    static ImpactIndex from_parts(ModelVariant variant, std::uint64_t config_hash, Vocabulary vocab,
                                  std::vector<std::string> doc_ids, const NormStats& stats,
                                  std::vector<std::vector<Posting>> postings)
    {
        if (postings.size() != vocab.size()) {
            throw ContractError("impact index: one posting list per vocabulary term required");
        }
        for (const auto& list : postings) {
            for (std::size_t i = 0; i < list.size(); ++i) {
                if (list[i].doc >= doc_ids.size() || (i > 0 && list[i].doc <= list[i - 1].doc)) {
                    throw ContractError("impact index: posting lists must be sorted, unique and in range");
                }
            }
        }
        ImpactIndex index;
        index.variant_ = variant;
        index.config_hash_ = config_hash;
        index.vocab_ = std::move(vocab);
        index.doc_ids_ = std::move(doc_ids);
        const double values[6] = {stats.latent_mean,  stats.latent_var, stats.explicit_mean,
                                  stats.explicit_var, stats.tf_mean,    stats.dlen_mean};
        index.set_stats(values);
        index.postings_ = std::move(postings);
        return index;
    }

  private:
    [[nodiscard]] std::array<double, 6> stats_values() const
    {
        return {stats_.latent_mean, stats_.latent_var, stats_.explicit_mean,
                stats_.explicit_var, stats_.tf_mean, stats_.dlen_mean};
    }

    void set_stats(const double* v)
    {
        stats_.latent_mean = v[0];
        stats_.latent_var = v[1];
        stats_.explicit_mean = v[2];
        stats_.explicit_var = v[3];
        stats_.tf_mean = v[4];
        stats_.dlen_mean = v[5];
        stats_.frozen = true;
    }

    ModelVariant variant_ = ModelVariant::ndrm1;
    std::uint64_t config_hash_ = 0;
    Vocabulary vocab_;
    std::vector<std::string> doc_ids_;
    NormStats stats_;
    std::vector<std::vector<Posting>> postings_;
};

/// Scores of each distinct in-vocabulary term of `doc`, in term id order.
template <typename T>
std::vector<std::pair<std::uint32_t, float>> document_impacts(const DocumentRecord& doc, const Model<T>& model,
                                                              const Vocabulary& vocab)
{
    std::vector<QueryRecord> singles;
    for (auto [term, tf] : doc.term_freqs) {
        if (term == kUnknownTerm) {
            continue;
        }
        QueryRecord q;
        q.terms = {term};
        q.embed_ids = {vocab.embed_id(term)};
        singles.push_back(std::move(q));
    }
    std::vector<std::pair<std::uint32_t, float>> out;
    if (singles.empty()) {
        return out;
    }
    Tensor<T> encoding;
    if (model.config().uses_latent()) {
        encoding = model.encode_document(doc);
    }
    std::vector<ScoreRequest<T>> requests;
    for (const auto& q : singles) {
        requests.push_back({&q, &doc, encoding.defined() ? &encoding : nullptr});
    }
    auto scores = model.score_batch_frozen(requests, vocab);
    for (std::size_t i = 0; i < singles.size(); ++i) {
        out.emplace_back(singles[i].terms[0], static_cast<float>(scores[i]));
    }
    return out;
}

/// Precomputes every (term, containing document) score. Documents are split
/// into contiguous ranges across `threads` workers and merged in order, so the
/// result does not depend on the thread count.
template <typename T>
ImpactIndex build_index(const Corpus& corpus, const Model<T>& model, std::size_t threads = 1)
{
    if (!model.stats().frozen) {
        throw ContractError("build_index: model statistics must be frozen");
    }
    std::vector<std::string> doc_ids;
    for (const auto& d : corpus.documents) {
        doc_ids.push_back(d.id);
    }
    std::vector<std::vector<Posting>> postings(corpus.vocab.size());

    const std::size_t n = corpus.size();
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
    using Partial = std::vector<std::vector<std::pair<std::uint32_t, float>>>;
    std::vector<Partial> partials(threads);
    std::vector<std::exception_ptr> errors(threads);
    auto work = [&](std::size_t w) {
        try {
            NoGradGuard guard;
            const std::size_t begin = n * w / threads, end = n * (w + 1) / threads;
            for (std::size_t d = begin; d < end; ++d) {
                partials[w].push_back(document_impacts(corpus.documents[d], model, corpus.vocab));
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back(work, w);
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    std::uint32_t doc = 0;
    for (const auto& part : partials) {
        for (const auto& impacts : part) {
            for (auto [term, score] : impacts) {
                postings[term].push_back({doc, score});
            }
            ++doc;
        }
    }
    return ImpactIndex::from_parts(model.variant(), model.config().hash(), corpus.vocab, std::move(doc_ids),
                                   model.stats(), std::move(postings));
}

/// Direct forward scoring of candidate documents; unknown ids are skipped and counted.
template <typename T>
RetrievalResult rerank(const QueryRecord& q, std::span<const std::string> candidates, const Corpus& corpus,
                       const Model<T>& model)
{
    RetrievalResult result;
    std::vector<ScoredDoc> scored;
    std::vector<std::uint8_t> seen(corpus.size(), 0);
    for (const auto& id : candidates) {
        auto doc = corpus.find(id);
        if (!doc) {
            ++result.skipped;
            continue;
        }
        if (seen[*doc]) {
            continue;
        }
        seen[*doc] = 1;
        scored.push_back(
            {*doc, static_cast<double>(model.score_query_document(q, corpus.documents[*doc], corpus.vocab))});
    }
    const std::size_t count = scored.size();
    result.ranking = top_k(std::move(scored), count);
    return result;
}

}  // namespace ckqti
