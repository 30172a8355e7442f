// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ckqti/corpus.hpp"
#include "ckqti/model.hpp"

namespace ckqti {

/// Document indices refer to Corpus::documents, `query` to TrainingData::queries.
struct TrainInstance {
    std::size_t query = 0;
    std::uint32_t positive = 0;
    std::uint32_t candidate_negative = 0;
    std::array<std::uint32_t, 2> collection_negatives{};

    void validate() const
    {
        const std::uint32_t ids[4] = {positive, candidate_negative, collection_negatives[0], collection_negatives[1]};
        for (int i = 0; i < 4; ++i) {
            for (int j = i + 1; j < 4; ++j) {
                if (ids[i] == ids[j]) {
                    throw ContractError("train instance: documents must be distinct");
                }
            }
        }
    }
};

struct TrainPair {
    std::size_t query = 0;
    std::uint32_t preferred = 0;
    std::uint32_t other = 0;

    friend bool operator==(const TrainPair&, const TrainPair&) = default;
};

/// pos over each negative, then the candidate negative over each collection negative.
inline std::vector<TrainPair> expand_pairs(const TrainInstance& inst)
{
    inst.validate();
    const auto q = inst.query;
    const auto [c1, c2] = inst.collection_negatives;
    return {
        {q, inst.positive, inst.candidate_negative},
        {q, inst.positive, c1},
        {q, inst.positive, c2},
        {q, inst.candidate_negative, c1},
        {q, inst.candidate_negative, c2},
    };
}

/// log(1 + exp(-(s_pref - s_other))).
inline double ranknet_loss(double s_pref, double s_other)
{
    const double x = s_other - s_pref;
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Elementwise over equally shaped score tensors.
template <typename T>
Tensor<T> ranknet_loss(const Tensor<T>& s_pref, const Tensor<T>& s_other)
{
    return softplus(sub(s_other, s_pref));
}

struct TrainingExample {
    std::size_t query = 0;
    std::uint32_t positive = 0;
};

struct TrainingData {
    std::vector<QueryRecord> queries;
    std::vector<TrainingExample> examples;
    /// Candidate documents per query, in rank order.
    std::vector<std::vector<std::uint32_t>> candidates;
    std::size_t skipped_examples = 0;
};

/// Resolves (qid, docid) triples and candidate lists against the corpus.
/// Triples with an unknown query or document, or whose query has no
/// candidate other than the positive, are skipped and counted.
inline TrainingData make_training_data(const Corpus& corpus, std::vector<QueryRecord> queries,
                                       const std::vector<std::pair<std::string, std::string>>& triples,
                                       const Run& candidates)
{
    TrainingData data;
    data.queries = std::move(queries);
    std::unordered_map<std::string, std::size_t> query_index;
    for (std::size_t i = 0; i < data.queries.size(); ++i) {
        query_index.emplace(data.queries[i].id, i);
    }
    data.candidates.resize(data.queries.size());
    for (const auto& [qid, list] : candidates.rankings) {
        auto it = query_index.find(qid);
        if (it == query_index.end()) {
            continue;
        }
        for (const auto& entry : list) {
            if (auto doc = corpus.find(entry.docid)) {
                data.candidates[it->second].push_back(*doc);
            }
        }
    }
    for (const auto& [qid, docid] : triples) {
        auto q = query_index.find(qid);
        auto doc = corpus.find(docid);
        if (q == query_index.end() || !doc) {
            ++data.skipped_examples;
            continue;
        }
        const auto& cands = data.candidates[q->second];
        const bool usable = std::any_of(cands.begin(), cands.end(), [&](std::uint32_t c) { return c != *doc; });
        if (!usable) {
            ++data.skipped_examples;
            continue;
        }
        data.examples.push_back({q->second, *doc});
    }
    return data;
}

/// One candidate negative from the query's list and two collection negatives,
/// all drawn uniformly with rejection so the four documents are distinct.
template <typename Rng>
TrainInstance sample_instance(const TrainingData& data, const TrainingExample& example, std::size_t collection_size,
                              Rng& rng)
{
    if (collection_size < 4) {
        throw ContractError("sample_instance: collection needs at least 4 documents");
    }
    const auto& cands = data.candidates.at(example.query);
    if (std::none_of(cands.begin(), cands.end(), [&](std::uint32_t c) { return c != example.positive; })) {
        throw ContractError("sample_instance: query has no candidate negative");
    }
    TrainInstance inst;
    inst.query = example.query;
    inst.positive = example.positive;
    std::uniform_int_distribution<std::size_t> pick_candidate(0, cands.size() - 1);
    do {
        inst.candidate_negative = cands[pick_candidate(rng)];
    } while (inst.candidate_negative == inst.positive);
    std::uniform_int_distribution<std::uint32_t> pick_doc(0, static_cast<std::uint32_t>(collection_size - 1));
    auto draw = [&](std::initializer_list<std::uint32_t> taken) {
        while (true) {
            const auto d = pick_doc(rng);
            if (std::find(taken.begin(), taken.end(), d) == taken.end()) {
                return d;
            }
        }
    };
    inst.collection_negatives[0] = draw({inst.positive, inst.candidate_negative});
    inst.collection_negatives[1] = draw({inst.positive, inst.candidate_negative, inst.collection_negatives[0]});
    return inst;
}

/// Mean RankNet loss over `pairs`. Each distinct (query, document) is scored once.
template <typename T>
Tensor<T> pair_loss(Model<T>& model, const Corpus& corpus, std::span<const QueryRecord> queries,
                    std::span<const TrainPair> pairs, const ForwardContext& ctx, bool update_stats)
{
    if (pairs.empty()) {
        throw ContractError("pair_loss: no pairs");
    }
    std::map<std::pair<std::size_t, std::uint32_t>, std::size_t> slot;
    std::vector<ScoreRequest<T>> requests;
    auto request = [&](std::size_t q, std::uint32_t d) {
        auto [it, inserted] = slot.try_emplace({q, d}, requests.size());
        if (inserted) {
            requests.push_back({&queries[q], &corpus.documents.at(d), nullptr});
        }
        return it->second;
    };
    std::vector<std::size_t> preferred, other;
    for (const auto& p : pairs) {
        preferred.push_back(request(p.query, p.preferred));
        other.push_back(request(p.query, p.other));
    }
    auto scores = model.score_batch(requests, corpus.vocab, ctx, update_stats);
    auto losses = ranknet_loss(gather(scores, std::span<const std::size_t>(preferred)),
                               gather(scores, std::span<const std::size_t>(other)));
    return mean(losses);
}

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Global gradient norm cap; 0 disables clipping.
    double clip_norm = 1.0;
};

/// Adam without weight decay, with global-norm gradient clipping.
template <typename T>
class Adam {
  public:
    Adam(std::vector<Tensor<T>> params, AdamConfig config) : params_(std::move(params)), config_(config)
    {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Returns the pre-clipping global gradient norm.
    double step()
    {
        double sq = 0;
        for (const auto& p : params_) {
            if (p.has_grad()) {
                for (T g : p.grad()) {
                    sq += static_cast<double>(g) * static_cast<double>(g);
                }
            }
        }
        const double norm = std::sqrt(sq);
        const double clip = config_.clip_norm > 0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
        ++t_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) {
                continue;
            }
            auto values = p.mutable_values();
            auto grad = p.grad();
            for (std::size_t j = 0; j < values.size(); ++j) {
                const double g = static_cast<double>(grad[j]) * clip;
                m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g;
                v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g * g;
                const double update =
                    config_.learning_rate * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + config_.epsilon);
                values[j] = static_cast<T>(values[j] - update);
            }
            p.zero_grad();
        }
        return norm;
    }

    [[nodiscard]] std::size_t steps() const { return t_; }
    [[nodiscard]] const AdamConfig& config() const { return config_; }

  private:
    std::vector<Tensor<T>> params_;
    AdamConfig config_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

struct TrainConfig {
    AdamConfig optimizer;
    std::size_t batch_instances = 32;
    std::uint64_t seed = 1;
};

struct LossRecord {
    std::size_t step = 0;
    double mean_loss = 0.0;
};

inline void write_loss_trace(std::ostream& out, std::span<const LossRecord> trace)
{
    out << "step,mean_loss\n";
    out.precision(17);
    for (const auto& r : trace) {
        out << r.step << ',' << r.mean_loss << '\n';
    }
}

/// Single-writer training loop over shuffled examples.
template <typename T>
class Trainer {
  public:
    Trainer(Model<T>& model, const Corpus& corpus, const TrainingData& data, TrainConfig config)
        : model_(model),
          corpus_(corpus),
          data_(data),
          config_(config),
          optimizer_(parameter_tensors(model), config.optimizer),
          rng_(config.seed)
    {
        if (config_.batch_instances == 0) {
            throw ConfigError("train: batch_instances must be positive");
        }
        if (model_.stats().frozen) {
            throw ContractError("train: model statistics are frozen");
        }
    }

    /// One optimizer step on explicit pairs. Returns the batch mean loss.
    double step(std::span<const TrainPair> pairs)
    {
        const ForwardContext ctx{true, &rng_};
        const std::size_t batch = trace_.size() + 1;
        try {
            auto loss = pair_loss(model_, corpus_, std::span<const QueryRecord>(data_.queries), pairs, ctx, true);
            const double value = static_cast<double>(loss.item());
            backward(loss);
            optimizer_.step();
            trace_.push_back({batch, value});
            return value;
        } catch (const NumericError& e) {
            throw NumericError("train: non-finite value in batch " + std::to_string(batch) + " (" + e.what() +
                               "); parameter norms: " + parameter_norms());
        }
    }

    /// Samples `batch_instances` instances from the shuffled example stream and steps on their pairs.
    double step()
    {
        if (data_.examples.empty()) {
            throw ContractError("train: no usable training examples");
        }
        std::vector<TrainPair> pairs;
        pairs.reserve(config_.batch_instances * 5);
        for (std::size_t i = 0; i < config_.batch_instances; ++i) {
            if (cursor_ == order_.size()) {
                reshuffle();
            }
            const auto inst = sample_instance(data_, data_.examples[order_[cursor_++]], corpus_.size(), rng_);
            for (const auto& p : expand_pairs(inst)) {
                pairs.push_back(p);
            }
        }
        return step(std::span<const TrainPair>(pairs));
    }

    void train_steps(std::size_t steps)
    {
        for (std::size_t i = 0; i < steps; ++i) {
            step();
        }
    }

    /// Steps until the current pass over the examples is exhausted.
    void train_epoch()
    {
        reshuffle();
        const std::size_t steps = (data_.examples.size() + config_.batch_instances - 1) / config_.batch_instances;
        train_steps(steps);
    }

    [[nodiscard]] const std::vector<LossRecord>& trace() const { return trace_; }

    [[nodiscard]] std::string parameter_norms() const
    {
        std::ostringstream out;
        bool first = true;
        for (const auto& [name, t] : model_.named_parameters()) {
            double sq = 0;
            for (T v : t.values()) {
                sq += static_cast<double>(v) * static_cast<double>(v);
            }
            out << (first ? "" : ", ") << name << '=' << std::sqrt(sq);
            first = false;
        }
        return out.str();
    }

  private:
    static std::vector<Tensor<T>> parameter_tensors(const Model<T>& model)
    {
        std::vector<Tensor<T>> out;
        for (auto& [name, t] : model.named_parameters()) {
            out.push_back(t);
        }
        return out;
    }

    void reshuffle()
    {
        order_.resize(data_.examples.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }

    Model<T>& model_;
    const Corpus& corpus_;
    const TrainingData& data_;
    TrainConfig config_;
    Adam<T> optimizer_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::vector<LossRecord> trace_;
};

}  // namespace ckqti
