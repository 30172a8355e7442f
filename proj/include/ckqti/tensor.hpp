// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ckqti/error.hpp"
#include "ckqti/memory.hpp"

namespace ckqti {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

/// Thread-local switch for graph recording. Scoring workers run with it off.
class GradMode {
  public:
    static bool enabled() { return flag(); }
    static void set_enabled(bool value) { flag() = value; }

  private:
    static bool& flag()
    {
        thread_local bool enabled = true;
        return enabled;
    }
};

class NoGradGuard {
  public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    ~NoGradGuard() { GradMode::set_enabled(previous_); }

  private:
    bool previous_;
};

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    /// Extra tensors an op keeps for its backward pass (dropout masks, norm statistics).
    std::vector<Buffer<T>> saved;
    std::function<void(Node&)> backward;

    Node(Shape s, Buffer<T> d) : shape(std::move(s)), data(std::move(d)) {}

    std::span<T> ensure_grad()
    {
        if (grad.empty() && data.size() != 0) {
            grad = Buffer<T>(data.size(), shape);
        }
        return grad.span();
    }
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share the underlying node; values
/// are immutable once an op has produced them, only leaf parameters are
/// updated in place by optimizers.
template <typename T>
class Tensor {
  public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
    {
        auto count = shape_numel(shape);
        Buffer<T> data(count, shape);
        node_ = std::make_shared<detail::Node<T>>(std::move(shape), std::move(data));
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(std::move(shape), requires_grad); }

    static Tensor full(Shape shape, T value, bool requires_grad = false)
    {
        Tensor t(std::move(shape), requires_grad);
        auto v = t.mutable_values();
        std::fill(v.begin(), v.end(), value);
        return t;
    }

    static Tensor from_vector(Shape shape, std::span<const T> values, bool requires_grad = false)
    {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("from_vector: shape " + shape_str(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        }
        Tensor t(std::move(shape), requires_grad);
        std::copy(values.begin(), values.end(), t.mutable_values().begin());
        return t;
    }

    static Tensor from_vector(Shape shape, const std::vector<T>& values, bool requires_grad = false)
    {
        return from_vector(std::move(shape), std::span<const T>(values), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) { return full({1}, value, requires_grad); }

    static Tensor from_node(NodePtr node)
    {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t ndim() const { return node_->shape.size(); }
    [[nodiscard]] std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
    [[nodiscard]] std::size_t numel() const { return node_->data.size(); }

    [[nodiscard]] std::span<const T> values() const { return std::as_const(node_->data).span(); }
    /// In-place access for initialization and optimizer updates on leaves.
    [[nodiscard]] std::span<T> mutable_values() { return node_->data.span(); }

    [[nodiscard]] T item() const
    {
        if (numel() != 1) {
            throw ContractError("item() on tensor of shape " + shape_str(shape()));
        }
        return node_->data[0];
    }
    [[nodiscard]] T operator[](std::size_t i) const { return node_->data[i]; }
    [[nodiscard]] T at(std::size_t row, std::size_t col) const { return node_->data[row * node_->shape.back() + col]; }

    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool value)
    {
        node_->requires_grad = value;
        return *this;
    }
    [[nodiscard]] bool is_leaf() const { return node_->is_leaf; }

    [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
    [[nodiscard]] std::span<const T> grad() const { return std::as_const(node_->grad).span(); }
    [[nodiscard]] std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.release(); }

    /// Same values, cut from the graph.
    [[nodiscard]] Tensor detach() const { return from_vector(shape(), values()); }

    [[nodiscard]] detail::Node<T>& node() const { return *node_; }
    [[nodiscard]] const NodePtr& node_ptr() const { return node_; }

    [[nodiscard]] std::vector<T> to_vector() const { return {values().begin(), values().end()}; }

  private:
    NodePtr node_;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs)
{
    if (!GradMode::enabled()) {
        return false;
    }
    for (const auto* input : inputs) {
        if (input->defined() && input->requires_grad()) {
            return true;
        }
    }
    return false;
}

template <typename T>
void check_finite(const Buffer<T>& data, const char* op)
{
    const T* p = data.data();
    for (std::size_t i = 0, n = data.size(); i < n; ++i) {
        if (!std::isfinite(p[i])) {
            throw NumericError(std::string(op) + ": non-finite value at index " + std::to_string(i));
        }
    }
}

/// Wraps an op result into a node, attaching the backward closure only when
/// at least one input is tracked and recording is enabled.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward, std::vector<Buffer<T>> saved = {})
{
    check_finite(data, op);
    auto node = std::make_shared<Node<T>>(std::move(shape), std::move(data));
    node->op = op;
    node->is_leaf = false;
    if (any_requires_grad<T>(inputs)) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto* input : inputs) {
            node->parents.push_back(input->node_ptr());
        }
        node->saved = std::move(saved);
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T> data, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward)
{
    check_finite(data, op);
    auto node = std::make_shared<Node<T>>(std::move(shape), std::move(data));
    node->op = op;
    node->is_leaf = false;
    bool tracked = false;
    if (GradMode::enabled()) {
        for (const auto& input : inputs) {
            tracked = tracked || input.requires_grad();
        }
    }
    if (tracked) {
        node->requires_grad = true;
        for (const auto& input : inputs) {
            node->parents.push_back(input.node_ptr());
        }
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

/// Gradient slot of parent `i`, or an empty span when that parent is untracked.
template <typename T>
std::span<T> parent_grad(Node<T>& node, std::size_t i)
{
    auto& parent = *node.parents[i];
    if (!parent.requires_grad) {
        return {};
    }
    return parent.ensure_grad();
}

template <typename T>
Buffer<T> alloc(const Shape& shape)
{
    return Buffer<T>(shape_numel(shape), shape);
}

}  // namespace detail

/// Reverse-mode pass from a scalar loss. Every tracked node is visited once in
/// reverse topological order; interior gradients and graph edges are released
/// as soon as they have been propagated, so the graph cannot be reused.
template <typename T>
void backward(const Tensor<T>& loss)
{
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not on the tape");
    }
    using Node = detail::Node<T>;
    // Owning references keep not-yet-processed nodes alive after their
    // children drop graph edges; each is released right after propagation.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(loss.node_ptr(), 0);
    visited.insert(&loss.node());
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            auto parent = top.first->parents[top.second++];
            if (parent->requires_grad && !visited.count(parent.get())) {
                visited.insert(parent.get());
                stack.emplace_back(std::move(parent), 0);
            }
        } else {
            order.push_back(std::move(top.first));
            stack.pop_back();
        }
    }
    loss.node().ensure_grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = it->get();
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
        if (!node->is_leaf) {
            node->backward = nullptr;
            node->parents.clear();
            node->saved.clear();
            node->grad.release();
        }
        it->reset();
    }
}

}  // namespace ckqti
