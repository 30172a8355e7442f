// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <ranges>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ckqti/error.hpp"

namespace ckqti {

inline constexpr std::size_t kMaxDocumentTokens = 4000;
inline constexpr std::size_t kMaxQueryTokens = 20;
/// Term id of a query token that never occurs in the collection.
inline constexpr std::uint32_t kUnknownTerm = std::numeric_limits<std::uint32_t>::max();

/// Lowercased maximal runs of alphanumeric bytes. Bytes >= 0x80 (UTF-8
/// continuation and lead bytes) count as alphanumeric and are kept verbatim.
inline std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        const bool alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
        if (alnum) {
            current.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
        if (tab == std::string_view::npos) {
            break;
        }
        start = tab + 1;
    }
    return fields;
}

inline std::vector<std::string> split_whitespace(const std::string& line)
{
    std::istringstream in(line);
    std::vector<std::string> out;
    std::string field;
    while (in >> field) {
        out.push_back(field);
    }
    return out;
}

inline void strip_cr(std::string& line)
{
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
}

inline std::ifstream open_input(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "' for reading");
    }
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open '" + path.string() + "' for writing");
    }
    return out;
}

}  // namespace detail

struct RawDocument {
    std::string id;
    std::vector<std::string> tokens;
};

struct IngestStats {
    std::size_t documents = 0;
    std::size_t malformed_lines = 0;
    std::size_t orcas_queries = 0;
    std::size_t orcas_malformed_lines = 0;
    std::size_t truncated_documents = 0;
};

struct RawCorpus {
    std::vector<RawDocument> documents;
    IngestStats stats;
};

/// Reads `doc_id \t url \t title \t body` lines and optional `doc_id \t query`
/// ORCAS lines. Tokens are url, title, body, then clicked queries in file
/// order, cut at `max_tokens`. Duplicate ids and documents without any
/// token count as malformed.
inline RawCorpus ingest_corpus(std::istream& docs, std::istream* orcas, std::size_t max_tokens = kMaxDocumentTokens)
{
    RawCorpus corpus;
    std::unordered_map<std::string, std::vector<std::string>> clicked;
    std::string line;
    if (orcas != nullptr) {
        while (std::getline(*orcas, line)) {
            detail::strip_cr(line);
            if (line.empty()) {
                continue;
            }
            auto fields = detail::split_tabs(line);
            if (fields.size() != 2 || fields[0].empty()) {
                ++corpus.stats.orcas_malformed_lines;
                continue;
            }
            clicked[std::string(fields[0])].emplace_back(fields[1]);
            ++corpus.stats.orcas_queries;
        }
    }
    std::unordered_map<std::string, std::size_t> seen;
    while (std::getline(docs, line)) {
        detail::strip_cr(line);
        if (line.empty()) {
            continue;
        }
        auto fields = detail::split_tabs(line);
        if (fields.size() != 4 || fields[0].empty() || seen.count(std::string(fields[0]))) {
            ++corpus.stats.malformed_lines;
            continue;
        }
        RawDocument doc;
        doc.id = std::string(fields[0]);
        auto append = [&](std::string_view text) {
            for (auto& token : tokenize(text)) {
                doc.tokens.push_back(std::move(token));
            }
        };
        append(fields[1]);
        append(fields[2]);
        append(fields[3]);
        if (auto it = clicked.find(doc.id); it != clicked.end()) {
            for (const auto& query : it->second) {
                append(query);
            }
        }
        if (doc.tokens.empty()) {
            ++corpus.stats.malformed_lines;
            continue;
        }
        if (doc.tokens.size() > max_tokens) {
            doc.tokens.resize(max_tokens);
            ++corpus.stats.truncated_documents;
        }
        seen.emplace(doc.id, corpus.documents.size());
        corpus.documents.push_back(std::move(doc));
    }
    corpus.stats.documents = corpus.documents.size();
    return corpus;
}

inline RawCorpus ingest_corpus(const std::filesystem::path& docs_file,
                               const std::optional<std::filesystem::path>& orcas_file = std::nullopt,
                               std::size_t max_tokens = kMaxDocumentTokens)
{
    auto docs = detail::open_input(docs_file);
    if (orcas_file) {
        auto orcas = detail::open_input(*orcas_file);
        return ingest_corpus(docs, &orcas, max_tokens);
    }
    return ingest_corpus(docs, nullptr, max_tokens);
}

/// Collection statistics. Every collection term has a dense id (lexicographic
/// order); terms with df >= min_df additionally own an embedding row, row 0
/// being the shared out-of-vocabulary row.
class Vocabulary {
  public:
    Vocabulary() = default;

    template <typename TokenLists>
    static Vocabulary build(const TokenLists& documents, std::size_t min_df = 2)
    {
        std::map<std::string, std::uint32_t> df;
        std::size_t total_length = 0;
        std::size_t count = 0;
        for (const auto& tokens : documents) {
            std::vector<std::string_view> unique(tokens.begin(), tokens.end());
            std::sort(unique.begin(), unique.end());
            unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
            for (auto term : unique) {
                ++df[std::string(term)];
            }
            total_length += tokens.size();
            ++count;
        }
        Vocabulary v;
        v.num_docs_ = count;
        v.mean_length_ = count ? static_cast<double>(total_length) / static_cast<double>(count) : 0.0;
        v.min_df_ = min_df;
        for (auto& [term, f] : df) {
            v.add_term(term, f);
        }
        v.finish();
        return v;
    }

    [[nodiscard]] std::size_t size() const { return terms_.size(); }
    [[nodiscard]] std::size_t num_docs() const { return num_docs_; }
    [[nodiscard]] double mean_document_length() const { return mean_length_; }
    [[nodiscard]] std::size_t min_df() const { return min_df_; }
    /// Rows of the embedding table, OOV row included.
    [[nodiscard]] std::size_t embedding_rows() const { return embedding_rows_; }

    [[nodiscard]] std::uint32_t term_id(std::string_view term) const
    {
        auto it = std::lower_bound(terms_.begin(), terms_.end(), term);
        if (it == terms_.end() || *it != term) {
            return kUnknownTerm;
        }
        return static_cast<std::uint32_t>(it - terms_.begin());
    }
    [[nodiscard]] const std::string& term(std::uint32_t id) const { return terms_.at(id); }
    [[nodiscard]] std::uint32_t df(std::uint32_t id) const { return id == kUnknownTerm ? 0 : df_.at(id); }

    /// ln((N + 1) / (df + 1)); an unknown term has df 0.
    [[nodiscard]] double idf(std::uint32_t id) const
    {
        return std::log((static_cast<double>(num_docs_) + 1.0) / (static_cast<double>(df(id)) + 1.0));
    }

    [[nodiscard]] std::uint32_t embed_id(std::uint32_t id) const { return id == kUnknownTerm ? 0 : embed_.at(id); }

    void save(std::ostream& out) const
    {
        out << "ckqti-vocab\t1\t" << num_docs_ << '\t' << min_df_ << '\t';
        out.precision(17);
        out << mean_length_ << '\n';
        for (std::size_t i = 0; i < terms_.size(); ++i) {
            out << terms_[i] << '\t' << df_[i] << '\n';
        }
    }

    void save(const std::filesystem::path& path) const
    {
        auto out = detail::open_output(path);
        save(out);
    }

    static Vocabulary load(std::istream& in)
    {
        std::string line;
        if (!std::getline(in, line)) {
            throw FormatError("vocabulary: missing header");
        }
        auto header = detail::split_tabs(line);
        if (header.size() != 5 || header[0] != "ckqti-vocab" || header[1] != "1") {
            throw FormatError("vocabulary: bad header");
        }
        Vocabulary v;
        try {
            v.num_docs_ = std::stoull(std::string(header[2]));
            v.min_df_ = std::stoull(std::string(header[3]));
            v.mean_length_ = std::stod(std::string(header[4]));
        } catch (const std::exception&) {
            throw FormatError("vocabulary: bad header values");
        }
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            auto fields = detail::split_tabs(line);
            if (fields.size() != 2) {
                throw FormatError("vocabulary: malformed line " + std::to_string(lineno));
            }
            std::uint32_t f = 0;
            try {
                f = static_cast<std::uint32_t>(std::stoul(std::string(fields[1])));
            } catch (const std::exception&) {
                throw FormatError("vocabulary: bad df on line " + std::to_string(lineno));
            }
            if (!v.terms_.empty() && !(v.terms_.back() < fields[0])) {
                throw FormatError("vocabulary: terms not strictly sorted at line " + std::to_string(lineno));
            }
            v.add_term(std::string(fields[0]), f);
        }
        v.finish();
        return v;
    }

    static Vocabulary load(const std::filesystem::path& path)
    {
        auto in = detail::open_input(path);
        return load(in);
    }

  private:
    void add_term(std::string term, std::uint32_t f)
    {
        terms_.push_back(std::move(term));
        df_.push_back(f);
    }

    void finish()
    {
        embed_.assign(terms_.size(), 0);
        std::uint32_t next = 1;
        for (std::size_t i = 0; i < terms_.size(); ++i) {
            if (df_[i] > num_docs_) {
                throw FormatError("vocabulary: df exceeds collection size for '" + terms_[i] + "'");
            }
            if (df_[i] >= min_df_) {
                embed_[i] = next++;
            }
        }
        embedding_rows_ = next;
    }

    std::vector<std::string> terms_;
    std::vector<std::uint32_t> df_;
    std::vector<std::uint32_t> embed_;
    std::size_t num_docs_ = 0;
    double mean_length_ = 0.0;
    std::size_t min_df_ = 2;
    std::size_t embedding_rows_ = 1;
};

/// A document mapped onto the vocabulary.
struct DocumentRecord {
    std::string id;
    std::vector<std::uint32_t> terms;
    std::vector<std::uint32_t> embed_ids;
    /// (term id, count), sorted by term id.
    std::vector<std::pair<std::uint32_t, std::uint32_t>> term_freqs;

    [[nodiscard]] std::size_t length() const { return terms.size(); }

    [[nodiscard]] std::uint32_t tf(std::uint32_t term) const
    {
        auto it = std::lower_bound(term_freqs.begin(), term_freqs.end(), std::make_pair(term, std::uint32_t{0}));
        return (it != term_freqs.end() && it->first == term) ? it->second : 0;
    }
};

struct QueryRecord {
    std::string id;
    std::vector<std::uint32_t> terms;
    std::vector<std::uint32_t> embed_ids;
};

template <typename Tokens>
DocumentRecord make_document(std::string id, const Tokens& tokens, const Vocabulary& vocab)
{
    DocumentRecord doc;
    doc.id = std::move(id);
    doc.terms.reserve(tokens.size());
    for (const auto& token : tokens) {
        doc.terms.push_back(vocab.term_id(token));
        doc.embed_ids.push_back(vocab.embed_id(doc.terms.back()));
    }
    std::vector<std::uint32_t> sorted = doc.terms;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) {
            ++j;
        }
        doc.term_freqs.emplace_back(sorted[i], static_cast<std::uint32_t>(j - i));
        i = j;
    }
    return doc;
}

inline QueryRecord make_query(std::string id, std::string_view text, const Vocabulary& vocab,
                              std::size_t max_tokens = kMaxQueryTokens)
{
    QueryRecord q;
    q.id = std::move(id);
    auto tokens = tokenize(text);
    if (tokens.size() > max_tokens) {
        tokens.resize(max_tokens);
    }
    for (const auto& token : tokens) {
        q.terms.push_back(vocab.term_id(token));
        q.embed_ids.push_back(vocab.embed_id(q.terms.back()));
    }
    return q;
}

/// Documents in ingestion order; the position is the internal document id.
struct Corpus {
    Vocabulary vocab;
    std::vector<DocumentRecord> documents;
    std::unordered_map<std::string, std::uint32_t> index_of;

    [[nodiscard]] std::size_t size() const { return documents.size(); }

    [[nodiscard]] std::optional<std::uint32_t> find(const std::string& id) const
    {
        auto it = index_of.find(id);
        if (it == index_of.end()) {
            return std::nullopt;
        }
        return it->second;
    }
};

inline Corpus make_corpus(const RawCorpus& raw, Vocabulary vocab)
{
    Corpus corpus;
    corpus.vocab = std::move(vocab);
    corpus.documents.reserve(raw.documents.size());
    for (const auto& doc : raw.documents) {
        corpus.index_of.emplace(doc.id, static_cast<std::uint32_t>(corpus.documents.size()));
        corpus.documents.push_back(make_document(doc.id, doc.tokens, corpus.vocab));
    }
    return corpus;
}

inline Corpus make_corpus(const RawCorpus& raw, std::size_t min_df = 2)
{
    return make_corpus(raw, Vocabulary::build(std::views::transform(raw.documents, &RawDocument::tokens), min_df));
}

/// `qid \t text` lines, in file order.
inline std::vector<std::pair<std::string, std::string>> read_query_texts(std::istream& in,
                                                                         std::size_t* malformed = nullptr)
{
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        if (line.empty()) {
            continue;
        }
        auto fields = detail::split_tabs(line);
        if (fields.size() != 2 || fields[0].empty()) {
            if (malformed) {
                ++*malformed;
            }
            continue;
        }
        out.emplace_back(std::string(fields[0]), std::string(fields[1]));
    }
    return out;
}

inline std::vector<QueryRecord> read_queries(const std::filesystem::path& path, const Vocabulary& vocab)
{
    auto in = detail::open_input(path);
    std::vector<QueryRecord> out;
    for (auto& [id, text] : read_query_texts(in)) {
        out.push_back(make_query(id, text, vocab));
    }
    return out;
}

/// Graded judgments keyed by query id, then document id.
class Qrels {
  public:
    void add(const std::string& qid, const std::string& docid, int relevance)
    {
        if (relevance < 0) {
            throw FormatError("qrels: negative relevance for " + qid + "/" + docid);
        }
        auto [it, inserted] = judgments_[qid].emplace(docid, relevance);
        if (!inserted) {
            throw FormatError("qrels: duplicate judgment for " + qid + "/" + docid);
        }
    }

    [[nodiscard]] bool has_query(const std::string& qid) const { return judgments_.count(qid) != 0; }

    [[nodiscard]] int relevance(const std::string& qid, const std::string& docid) const
    {
        auto q = judgments_.find(qid);
        if (q == judgments_.end()) {
            return 0;
        }
        auto d = q->second.find(docid);
        return d == q->second.end() ? 0 : d->second;
    }

    [[nodiscard]] const std::unordered_map<std::string, int>& judgments(const std::string& qid) const
    {
        static const std::unordered_map<std::string, int> empty;
        auto q = judgments_.find(qid);
        return q == judgments_.end() ? empty : q->second;
    }

    [[nodiscard]] const std::map<std::string, std::unordered_map<std::string, int>>& all() const { return judgments_; }

    /// `qid iter docid rel` whitespace-separated.
    static Qrels read(std::istream& in)
    {
        Qrels qrels;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto fields = detail::split_whitespace(line);
            if (fields.empty()) {
                continue;
            }
            if (fields.size() != 4) {
                throw FormatError("qrels: expected 4 fields on line " + std::to_string(lineno));
            }
            int rel = 0;
            try {
                rel = std::stoi(fields[3]);
            } catch (const std::exception&) {
                throw FormatError("qrels: bad relevance on line " + std::to_string(lineno));
            }
            qrels.add(fields[0], fields[2], rel);
        }
        return qrels;
    }

    static Qrels read(const std::filesystem::path& path)
    {
        auto in = detail::open_input(path);
        return read(in);
    }

    void write(std::ostream& out) const
    {
        for (const auto& [qid, docs] : judgments_) {
            std::vector<std::pair<std::string, int>> sorted(docs.begin(), docs.end());
            std::sort(sorted.begin(), sorted.end());
            for (const auto& [docid, rel] : sorted) {
                out << qid << " 0 " << docid << ' ' << rel << '\n';
            }
        }
    }

  private:
    std::map<std::string, std::unordered_map<std::string, int>> judgments_;
};

struct RankedDoc {
    std::string docid;
    double score = 0.0;
};

/// Ranked lists by query id, each in rank order.
struct Run {
    std::map<std::string, std::vector<RankedDoc>> rankings;

    /// Six-column TREC lines (`qid Q0 docid rank score tag`) or three-column
    /// candidate lines (`qid docid rank`). Lists are ordered by the rank column.
    static Run read(std::istream& in)
    {
        std::map<std::string, std::vector<std::pair<long, RankedDoc>>> staged;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto f = detail::split_whitespace(line);
            if (f.empty()) {
                continue;
            }
            try {
                if (f.size() == 6) {
                    staged[f[0]].push_back({std::stol(f[3]), RankedDoc{f[2], std::stod(f[4])}});
                } else if (f.size() == 3) {
                    const long rank = std::stol(f[2]);
                    staged[f[0]].push_back({rank, RankedDoc{f[1], -static_cast<double>(rank)}});
                } else {
                    throw FormatError("run: expected 3 or 6 fields on line " + std::to_string(lineno));
                }
            } catch (const std::logic_error&) {
                throw FormatError("run: bad number on line " + std::to_string(lineno));
            }
        }
        Run run;
        for (auto& [qid, entries] : staged) {
            std::stable_sort(entries.begin(), entries.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            auto& list = run.rankings[qid];
            for (auto& e : entries) {
                list.push_back(std::move(e.second));
            }
        }
        return run;
    }

    static Run read(const std::filesystem::path& path)
    {
        auto in = detail::open_input(path);
        return read(in);
    }

    void write(std::ostream& out, const std::string& tag) const
    {
        out.precision(9);
        for (const auto& [qid, list] : rankings) {
            write_query(out, qid, list, tag);
        }
    }

    static void write_query(std::ostream& out, const std::string& qid, const std::vector<RankedDoc>& list,
                            const std::string& tag)
    {
        for (std::size_t i = 0; i < list.size(); ++i) {
            out << qid << " Q0 " << list[i].docid << ' ' << (i + 1) << ' ' << list[i].score << ' ' << tag << '\n';
        }
    }
};

/// `qid \t positive_docid` training lines.
inline std::vector<std::pair<std::string, std::string>> read_training_triples(const std::filesystem::path& path)
{
    auto in = detail::open_input(path);
    return read_query_texts(in);
}

}  // namespace ckqti
