// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ckqti/corpus.hpp"

namespace ckqti {

enum class Metric { ndcg, ncg, ap, rr };

inline const char* to_string(Metric m)
{
    switch (m) {
    case Metric::ndcg:
        return "ndcg";
    case Metric::ncg:
        return "ncg";
    case Metric::ap:
        return "ap";
    case Metric::rr:
        return "rr";
    }
    return "?";
}

inline Metric metric_from_string(const std::string& s)
{
    for (Metric m : {Metric::ndcg, Metric::ncg, Metric::ap, Metric::rr}) {
        if (s == to_string(m)) {
            return m;
        }
    }
    throw ConfigError("unknown metric '" + s + "' (expected ndcg, ncg, ap or rr)");
}

struct EvalOptions {
    std::size_t cutoff = 10;
    /// Labels at or above this count as relevant for AP and RR.
    int relevance_threshold = 2;
};

struct EvalResult {
    std::map<std::string, double> per_query;
    double mean = 0.0;
    /// Run queries with no judgments; they are left out of the mean.
    std::size_t unjudged_queries = 0;

    void write_csv(std::ostream& out, Metric metric) const
    {
        out << "qid," << to_string(metric) << '\n';
        out.precision(10);
        for (const auto& [qid, value] : per_query) {
            out << qid << ',' << value << '\n';
        }
    }
};

namespace detail {

inline double gain(int rel) { return std::exp2(static_cast<double>(rel)) - 1.0; }

inline double discount(std::size_t rank0) { return 1.0 / std::log2(static_cast<double>(rank0) + 2.0); }

/// Labels of the first `cutoff` distinct documents of a ranking.
inline std::vector<int> ranked_labels(const std::vector<RankedDoc>& ranking,
                                      const std::unordered_map<std::string, int>& judged, std::size_t cutoff)
{
    std::vector<int> labels;
    std::unordered_set<std::string> seen;
    for (const auto& doc : ranking) {
        if (labels.size() == cutoff) {
            break;
        }
        if (!seen.insert(doc.docid).second) {
            continue;
        }
        auto it = judged.find(doc.docid);
        labels.push_back(it == judged.end() ? 0 : it->second);
    }
    return labels;
}

inline std::vector<int> ideal_labels(const std::unordered_map<std::string, int>& judged, std::size_t cutoff)
{
    std::vector<int> labels;
    for (const auto& [docid, rel] : judged) {
        labels.push_back(rel);
    }
    std::sort(labels.begin(), labels.end(), std::greater<>());
    if (labels.size() > cutoff) {
        labels.resize(cutoff);
    }
    return labels;
}

}  // namespace detail

/// Metric value of one ranked list against one query's judgments.
inline double evaluate_ranking(const std::vector<RankedDoc>& ranking, const std::unordered_map<std::string, int>& judged,
                               Metric metric, const EvalOptions& options = {})
{
    const auto labels = detail::ranked_labels(ranking, judged, options.cutoff);
    switch (metric) {
    case Metric::ndcg:
    case Metric::ncg: {
        const bool discounted = metric == Metric::ndcg;
        auto total = [&](const std::vector<int>& ls) {
            double s = 0;
            for (std::size_t i = 0; i < ls.size(); ++i) {
                s += detail::gain(ls[i]) * (discounted ? detail::discount(i) : 1.0);
            }
            return s;
        };
        const double ideal = total(detail::ideal_labels(judged, options.cutoff));
        return ideal > 0 ? total(labels) / ideal : 0.0;
    }
    case Metric::ap: {
        std::size_t relevant_total = 0;
        for (const auto& [docid, rel] : judged) {
            relevant_total += rel >= options.relevance_threshold;
        }
        if (relevant_total == 0) {
            return 0.0;
        }
        double sum_precision = 0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= options.relevance_threshold) {
                ++hits;
                sum_precision += static_cast<double>(hits) / static_cast<double>(i + 1);
            }
        }
        return sum_precision / static_cast<double>(relevant_total);
    }
    case Metric::rr:
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= options.relevance_threshold) {
                return 1.0 / static_cast<double>(i + 1);
            }
        }
        return 0.0;
    }
    return 0.0;
}

/// Per-query values and their mean over the run's judged queries.
inline EvalResult evaluate(const Run& run, const Qrels& qrels, Metric metric, const EvalOptions& options = {})
{
    EvalResult result;
    double total = 0;
    for (const auto& [qid, ranking] : run.rankings) {
        if (!qrels.has_query(qid)) {
            ++result.unjudged_queries;
            continue;
        }
        const double value = evaluate_ranking(ranking, qrels.judgments(qid), metric, options);
        result.per_query.emplace(qid, value);
        total += value;
    }
    result.mean = result.per_query.empty() ? 0.0 : total / static_cast<double>(result.per_query.size());
    return result;
}

}  // namespace ckqti
