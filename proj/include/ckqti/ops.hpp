// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ckqti/tensor.hpp"

namespace ckqti {

namespace detail {

inline void require_same_shape(const char* op, const Shape& a, const Shape& b)
{
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank)
{
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
    }
}

inline void require_scalar(const char* op, const Shape& s)
{
    if (shape_numel(s) != 1) {
        throw DimensionError(std::string(op) + ": expected a single-element tensor, got " + shape_str(s));
    }
}

/// Elementwise op with derivative expressed through input x and output y.
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df)
{
    auto out = alloc<T>(x.shape());
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return make_result<T>(op, x.shape(), std::move(out), {&x}, [df](Node<T>& self) {
        auto gx = parent_grad(self, 0);
        auto xv = self.parents[0]->data.span();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i] * df(xv[i], self.data[i]);
        }
    });
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

inline AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis)
{
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require_same_shape("add", a.shape(), b.shape());
    auto out = detail::alloc<T>(a.shape());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
            auto g = detail::parent_grad(self, p);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require_same_shape("sub", a.shape(), b.shape());
    auto out = detail::alloc<T>(a.shape());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] - bv[i];
    }
    return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
        auto ga = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += self.grad[i];
        }
        auto gb = detail::parent_grad(self, 1);
        for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require_same_shape("mul", a.shape(), b.shape());
    auto out = detail::alloc<T>(a.shape());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
        auto av = self.parents[0]->data.span();
        auto bv = self.parents[1]->data.span();
        auto ga = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += self.grad[i] * bv[i];
        }
        auto gb = detail::parent_grad(self, 1);
        for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] += self.grad[i] * av[i];
        }
    });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require_same_shape("div", a.shape(), b.shape());
    auto out = detail::alloc<T>(a.shape());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] / bv[i];
    }
    return detail::make_result<T>("div", a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
        auto bv = self.parents[1]->data.span();
        auto ga = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += self.grad[i] / bv[i];
        }
        auto gb = detail::parent_grad(self, 1);
        for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] -= self.grad[i] * self.data[i] / bv[i];
        }
    });
}

/// x * c for a constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c)
{
    return detail::unary<T>("scale", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

/// x + c for a constant c.
template <typename T>
Tensor<T> add_const(const Tensor<T>& x, T c)
{
    return detail::unary<T>("add_const", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

/// x * s where s is a tracked single-element tensor.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s)
{
    detail::require_scalar("mul_scalar", s.shape());
    const T sv = s.values()[0];
    auto out = detail::alloc<T>(x.shape());
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] * sv;
    }
    return detail::make_result<T>("mul_scalar", x.shape(), std::move(out), {&x, &s}, [](detail::Node<T>& self) {
        auto xv = self.parents[0]->data.span();
        const T sv = self.parents[1]->data[0];
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i] * sv;
        }
        auto gs = detail::parent_grad(self, 1);
        if (!gs.empty()) {
            T acc = 0;
            for (std::size_t i = 0; i < xv.size(); ++i) {
                acc += self.grad[i] * xv[i];
            }
            gs[0] += acc;
        }
    });
}

/// x + s where s is a tracked single-element tensor.
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, const Tensor<T>& s)
{
    detail::require_scalar("add_scalar", s.shape());
    const T sv = s.values()[0];
    auto out = detail::alloc<T>(x.shape());
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] + sv;
    }
    return detail::make_result<T>("add_scalar", x.shape(), std::move(out), {&x, &s}, [](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i];
        }
        auto gs = detail::parent_grad(self, 1);
        if (!gs.empty()) {
            T acc = 0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                acc += self.grad[i];
            }
            gs[0] += acc;
        }
    });
}

/// Adds bias[c] along the trailing dimension of x[..., c]. The only broadcast supported.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias)
{
    if (bias.ndim() != 1 || x.ndim() == 0 || x.shape().back() != bias.size(0)) {
        throw DimensionError("add_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
    }
    const std::size_t c = bias.size(0);
    auto out = detail::alloc<T>(x.shape());
    auto xv = x.values();
    auto bv = bias.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] + bv[i % c];
    }
    return detail::make_result<T>("add_bias", x.shape(), std::move(out), {&x, &bias}, [c](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i];
        }
        auto gb = detail::parent_grad(self, 1);
        if (!gb.empty()) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gb[i % c] += self.grad[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

/// Derivative at exactly 0 is taken as 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x)
{
    return detail::unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x)
{
    return detail::unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x)
{
    return detail::unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// log(1 + exp(x)), stable for large |x|.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x)
{
    return detail::unary<T>(
        "softplus", x,
        [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T v, T) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// a[m x k] * b[k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.ndim() != 2 || b.ndim() != 2 || a.size(1) != b.size(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
    Shape shape{m, n};
    auto out = detail::alloc<T>(shape);
    const T* A = a.values().data();
    const T* B = b.values().data();
    T* C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            const T* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    return detail::make_result<T>("matmul", shape, std::move(out), {&a, &b}, [m, k, n](detail::Node<T>& self) {
        const T* A = self.parents[0]->data.data();
        const T* B = self.parents[1]->data.data();
        const T* G = self.grad.data();
        auto ga = detail::parent_grad(self, 0);
        if (!ga.empty()) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = 0;
                    const T* brow = B + p * n;
                    const T* grow = G + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += grow[j] * brow[j];
                    }
                    ga[i * k + p] += acc;
                }
            }
        }
        auto gb = detail::parent_grad(self, 1);
        if (!gb.empty()) {
            for (std::size_t i = 0; i < m; ++i) {
                const T* grow = G + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = A[i * k + p];
                    T* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        gbrow[j] += av * grow[j];
                    }
                }
            }
        }
    });
}

/// a[k x m]^T * b[k x n] without materializing the transpose.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.ndim() != 2 || b.ndim() != 2 || a.size(0) != b.size(0)) {
        throw DimensionError("matmul_tn: cannot multiply transpose of " + shape_str(a.shape()) + " by " +
                             shape_str(b.shape()));
    }
    const std::size_t k = a.size(0), m = a.size(1), n = b.size(1);
    Shape shape{m, n};
    auto out = detail::alloc<T>(shape);
    const T* A = a.values().data();
    const T* B = b.values().data();
    T* C = out.data();
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = A[p * m + i];
            T* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    return detail::make_result<T>("matmul_tn", shape, std::move(out), {&a, &b}, [k, m, n](detail::Node<T>& self) {
        const T* A = self.parents[0]->data.data();
        const T* B = self.parents[1]->data.data();
        const T* G = self.grad.data();
        auto ga = detail::parent_grad(self, 0);
        if (!ga.empty()) {
            for (std::size_t p = 0; p < k; ++p) {
                const T* brow = B + p * n;
                for (std::size_t i = 0; i < m; ++i) {
                    T acc = 0;
                    const T* grow = G + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += brow[j] * grow[j];
                    }
                    ga[p * m + i] += acc;
                }
            }
        }
        auto gb = detail::parent_grad(self, 1);
        if (!gb.empty()) {
            for (std::size_t p = 0; p < k; ++p) {
                T* gbrow = gb.data() + p * n;
                for (std::size_t i = 0; i < m; ++i) {
                    const T av = A[p * m + i];
                    const T* grow = G + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        gbrow[j] += av * grow[j];
                    }
                }
            }
        }
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x)
{
    detail::require_rank("transpose", x.shape(), 2);
    const std::size_t r = x.size(0), c = x.size(1);
    Shape shape{c, r};
    auto out = detail::alloc<T>(shape);
    auto xv = x.values();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = xv[i * c + j];
        }
    }
    return detail::make_result<T>("transpose", shape, std::move(out), {&x}, [r, c](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                gx[i * c + j] += self.grad[j * r + i];
            }
        }
    });
}

/// x[n x in] * W[:, offset : offset+width] + bias[offset : offset+width].
/// Gradients land in the matching column slice of W and bias. `bias` may be undefined.
template <typename T>
Tensor<T> linear_cols(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t offset,
                      std::size_t width)
{
    if (x.ndim() != 2 || weight.ndim() != 2 || x.size(1) != weight.size(0) || offset + width > weight.size(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()) + " at columns [" + std::to_string(offset) + ", " +
                             std::to_string(offset + width) + ")");
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.ndim() != 1 || bias.size(0) != weight.size(1))) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t n = x.size(0), in = x.size(1), total = weight.size(1);
    Shape shape{n, width};
    auto out = detail::alloc<T>(shape);
    const T* X = x.values().data();
    const T* W = weight.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        T* orow = out.data() + i * width;
        if (has_bias) {
            const T* b = bias.values().data() + offset;
            std::copy(b, b + width, orow);
        }
        for (std::size_t p = 0; p < in; ++p) {
            const T xv = X[i * in + p];
            const T* wrow = W + p * total + offset;
            for (std::size_t j = 0; j < width; ++j) {
                orow[j] += xv * wrow[j];
            }
        }
    }
    auto back = [n, in, total, offset, width, has_bias](detail::Node<T>& self) {
        const T* X = self.parents[0]->data.data();
        const T* W = self.parents[1]->data.data();
        const T* G = self.grad.data();
        auto gx = detail::parent_grad(self, 0);
        if (!gx.empty()) {
            for (std::size_t i = 0; i < n; ++i) {
                const T* grow = G + i * width;
                for (std::size_t p = 0; p < in; ++p) {
                    const T* wrow = W + p * total + offset;
                    T acc = 0;
                    for (std::size_t j = 0; j < width; ++j) {
                        acc += grow[j] * wrow[j];
                    }
                    gx[i * in + p] += acc;
                }
            }
        }
        auto gw = detail::parent_grad(self, 1);
        if (!gw.empty()) {
            for (std::size_t i = 0; i < n; ++i) {
                const T* grow = G + i * width;
                for (std::size_t p = 0; p < in; ++p) {
                    const T xv = X[i * in + p];
                    T* gwrow = gw.data() + p * total + offset;
                    for (std::size_t j = 0; j < width; ++j) {
                        gwrow[j] += xv * grow[j];
                    }
                }
            }
        }
        if (has_bias) {
            auto gb = detail::parent_grad(self, 2);
            if (!gb.empty()) {
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < width; ++j) {
                        gb[offset + j] += G[i * width + j];
                    }
                }
            }
        }
    };
    if (has_bias) {
        return detail::make_result<T>("linear", shape, std::move(out), {&x, &weight, &bias}, back);
    }
    return detail::make_result<T>("linear", shape, std::move(out), {&x, &weight}, back);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    return linear_cols(x, weight, bias, 0, weight.ndim() == 2 ? weight.size(1) : 0);
}

// ---------------------------------------------------------------------------
// Softmax and attention scores
// ---------------------------------------------------------------------------

/// Softmax along `axis`, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis)
{
    const auto s = detail::split_axis("softmax", x.shape(), axis);
    auto out = detail::alloc<T>(x.shape());
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.len * s.inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < s.len; ++j) {
                mx = std::max(mx, xv[base + j * s.inner]);
            }
            T total = 0;
            for (std::size_t j = 0; j < s.len; ++j) {
                const T e = std::exp(xv[base + j * s.inner] - mx);
                out[base + j * s.inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < s.len; ++j) {
                out[base + j * s.inner] /= total;
            }
        }
    }
    return detail::make_result<T>("softmax", x.shape(), std::move(out), {&x}, [s](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.len * s.inner + in;
                T dot = 0;
                for (std::size_t j = 0; j < s.len; ++j) {
                    const std::size_t idx = base + j * s.inner;
                    dot += self.grad[idx] * self.data[idx];
                }
                for (std::size_t j = 0; j < s.len; ++j) {
                    const std::size_t idx = base + j * s.inner;
                    gx[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

/// softmax(scale * Q K^T) along the key axis, returned as an [n x m] matrix.
/// The pre-softmax logits are never stored; only the probabilities are kept.
template <typename T>
Tensor<T> attention_probs(const Tensor<T>& q, const Tensor<T>& k, T scale_factor)
{
    if (q.ndim() != 2 || k.ndim() != 2 || q.size(1) != k.size(1)) {
        throw DimensionError("attention_probs: " + shape_str(q.shape()) + " vs " + shape_str(k.shape()));
    }
    const std::size_t n = q.size(0), m = k.size(0), d = q.size(1);
    Shape shape{n, m};
    auto out = detail::alloc<T>(shape);
    const T* Q = q.values().data();
    const T* K = k.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        T* row = out.data() + i * m;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < d; ++p) {
                acc += Q[i * d + p] * K[j * d + p];
            }
            row[j] = acc * scale_factor;
            mx = std::max(mx, row[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
        }
        for (std::size_t j = 0; j < m; ++j) {
            row[j] /= total;
        }
    }
    return detail::make_result<T>(
        "attention_probs", shape, std::move(out), {&q, &k}, [n, m, d, scale_factor](detail::Node<T>& self) {
            const T* Q = self.parents[0]->data.data();
            const T* K = self.parents[1]->data.data();
            auto gq = detail::parent_grad(self, 0);
            auto gk = detail::parent_grad(self, 1);
            std::vector<T> ds(m);
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = self.data.data() + i * m;
                const T* g = self.grad.data() + i * m;
                T dot = 0;
                for (std::size_t j = 0; j < m; ++j) {
                    dot += g[j] * p[j];
                }
                for (std::size_t j = 0; j < m; ++j) {
                    ds[j] = p[j] * (g[j] - dot) * scale_factor;
                }
                if (!gq.empty()) {
                    for (std::size_t j = 0; j < m; ++j) {
                        for (std::size_t c = 0; c < d; ++c) {
                            gq[i * d + c] += ds[j] * K[j * d + c];
                        }
                    }
                }
                if (!gk.empty()) {
                    for (std::size_t j = 0; j < m; ++j) {
                        for (std::size_t c = 0; c < d; ++c) {
                            gk[j * d + c] += ds[j] * Q[i * d + c];
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Convolution, normalization, dropout, embedding
// ---------------------------------------------------------------------------

/// Same-length grouped 1-D convolution over positions of x[n x c].
/// kernel has shape [c, window, c / groups]: output channel o reads only the
/// input channels of its group. Zero padding of (window - 1) / 2 on both sides.
template <typename T>
Tensor<T> grouped_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t groups, std::size_t window)
{
    detail::require_rank("grouped_conv1d", x.shape(), 2);
    const std::size_t n = x.size(0), c = x.size(1);
    if (groups == 0 || c % groups != 0) {
        throw ConfigError("grouped_conv1d: " + std::to_string(c) + " channels not divisible by " +
                          std::to_string(groups) + " groups");
    }
    if (window % 2 == 0) {
        throw ConfigError("grouped_conv1d: window must be odd, got " + std::to_string(window));
    }
    const std::size_t cg = c / groups;
    if (kernel.shape() != Shape{c, window, cg}) {
        throw DimensionError("grouped_conv1d: kernel " + shape_str(kernel.shape()) + " expected " +
                             shape_str({c, window, cg}));
    }
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(window - 1) / 2;
    Shape shape{n, c};
    auto out = detail::alloc<T>(shape);
    const T* X = x.values().data();
    const T* K = kernel.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        T* orow = out.data() + i * c;
        for (std::size_t w = 0; w < window; ++w) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(w) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) {
                continue;
            }
            const T* xrow = X + static_cast<std::size_t>(src) * c;
            for (std::size_t o = 0; o < c; ++o) {
                const T* xg = xrow + (o / cg) * cg;
                const T* kw = K + (o * window + w) * cg;
                T acc = 0;
                for (std::size_t j = 0; j < cg; ++j) {
                    acc += xg[j] * kw[j];
                }
                orow[o] += acc;
            }
        }
    }
    return detail::make_result<T>(
        "grouped_conv1d", shape, std::move(out), {&x, &kernel}, [n, c, cg, window, pad](detail::Node<T>& self) {
            const T* X = self.parents[0]->data.data();
            const T* K = self.parents[1]->data.data();
            auto gx = detail::parent_grad(self, 0);
            auto gk = detail::parent_grad(self, 1);
            for (std::size_t i = 0; i < n; ++i) {
                const T* grow = self.grad.data() + i * c;
                for (std::size_t w = 0; w < window; ++w) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(w) - pad;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) {
                        continue;
                    }
                    const std::size_t s = static_cast<std::size_t>(src);
                    for (std::size_t o = 0; o < c; ++o) {
                        const T g = grow[o];
                        const std::size_t gbase = (o / cg) * cg;
                        const std::size_t kbase = (o * window + w) * cg;
                        if (!gx.empty()) {
                            for (std::size_t j = 0; j < cg; ++j) {
                                gx[s * c + gbase + j] += g * K[kbase + j];
                            }
                        }
                        if (!gk.empty()) {
                            for (std::size_t j = 0; j < cg; ++j) {
                                gk[kbase + j] += g * X[s * c + gbase + j];
                            }
                        }
                    }
                }
            }
        });
}

/// Row-wise layer normalization of x[n x d] with affine gamma, beta of size d.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5))
{
    detail::require_rank("layer_norm", x.shape(), 2);
    const std::size_t n = x.size(0), d = x.size(1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw DimensionError("layer_norm: affine parameters must have shape " + shape_str({d}));
    }
    auto out = detail::alloc<T>(x.shape());
    Buffer<T> stats(2 * n, Shape{2, n});
    const T* X = x.values().data();
    const T* G = gamma.values().data();
    const T* B = beta.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = X + i * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += row[j];
        }
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (row[j] - mean) * (row[j] - mean);
        }
        var /= static_cast<T>(d);
        const T rstd = T(1) / std::sqrt(var + eps);
        stats[i] = mean;
        stats[n + i] = rstd;
        for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = (row[j] - mean) * rstd * G[j] + B[j];
        }
    }
    std::vector<Buffer<T>> saved;
    if (detail::any_requires_grad<T>({&x, &gamma, &beta})) {
        saved.push_back(std::move(stats));
    }
    return detail::make_result<T>(
        "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
        [n, d](detail::Node<T>& self) {
            const T* X = self.parents[0]->data.data();
            const T* G = self.parents[1]->data.data();
            const auto& stats = self.saved[0];
            auto gx = detail::parent_grad(self, 0);
            auto gg = detail::parent_grad(self, 1);
            auto gb = detail::parent_grad(self, 2);
            for (std::size_t i = 0; i < n; ++i) {
                const T mean = stats[i];
                const T rstd = stats[n + i];
                const T* row = X + i * d;
                const T* grow = self.grad.data() + i * d;
                T sum_dxhat = 0;
                T sum_dxhat_xhat = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const T xhat = (row[j] - mean) * rstd;
                    const T dxhat = grow[j] * G[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (!gg.empty()) {
                        gg[j] += grow[j] * xhat;
                    }
                    if (!gb.empty()) {
                        gb[j] += grow[j];
                    }
                }
                if (!gx.empty()) {
                    const T inv_d = T(1) / static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T xhat = (row[j] - mean) * rstd;
                        const T dxhat = grow[j] * G[j];
                        gx[i * d + j] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                    }
                }
            }
        },
        std::move(saved));
}

/// Inverted dropout. Identity (no copy) when not training or p == 0. The
/// sampled mask is kept on the node so backward uses the same mask.
template <typename T, typename Rng>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng& rng)
{
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(p));
    }
    if (!train || p == 0.0) {
        return x;
    }
    const T keep_scale = T(1) / static_cast<T>(1.0 - p);
    Buffer<T> mask(x.numel(), x.shape());
    std::bernoulli_distribution keep(1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = keep(rng) ? keep_scale : T(0);
    }
    auto out = detail::alloc<T>(x.shape());
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = xv[i] * mask[i];
    }
    std::vector<Buffer<T>> saved;
    if (detail::any_requires_grad<T>({&x})) {
        saved.push_back(std::move(mask));
    }
    return detail::make_result<T>(
        "dropout", x.shape(), std::move(out), {&x},
        [](detail::Node<T>& self) {
            auto gx = detail::parent_grad(self, 0);
            const auto& mask = self.saved[0];
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += self.grad[i] * mask[i];
            }
        },
        std::move(saved));
}

/// Gathers rows of table[v x d]. Rows named by `zero_row` yield zeros and
/// receive no gradient.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::uint32_t> ids,
                    std::optional<std::uint32_t> zero_row = std::nullopt)
{
    detail::require_rank("embedding", table.shape(), 2);
    const std::size_t rows = table.size(0), d = table.size(1);
    for (auto id : ids) {
        if (id >= rows) {
            throw DimensionError("embedding: id " + std::to_string(id) + " out of range for table " +
                                 shape_str(table.shape()));
        }
    }
    Shape shape{ids.size(), d};
    auto out = detail::alloc<T>(shape);
    const T* W = table.values().data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (zero_row && ids[i] == *zero_row) {
            continue;
        }
        std::copy(W + ids[i] * d, W + (ids[i] + 1) * d, out.data() + i * d);
    }
    std::vector<std::uint32_t> captured(ids.begin(), ids.end());
    return detail::make_result<T>("embedding", shape, std::move(out), {&table},
                                  [captured = std::move(captured), d, zero_row](detail::Node<T>& self) {
                                      auto gw = detail::parent_grad(self, 0);
                                      for (std::size_t i = 0; i < captured.size(); ++i) {
                                          if (zero_row && captured[i] == *zero_row) {
                                              continue;
                                          }
                                          T* dst = gw.data() + captured[i] * d;
                                          const T* src = self.grad.data() + i * d;
                                          for (std::size_t j = 0; j < d; ++j) {
                                              dst[j] += src[j];
                                          }
                                      }
                                  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto out = detail::alloc<T>(shape);
    std::copy(x.values().begin(), x.values().end(), out.data());
    return detail::make_result<T>("reshape", shape, std::move(out), {&x}, [](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i];
        }
    });
}

/// Slice [start, start + length) along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length)
{
    const auto s = detail::split_axis("narrow", x.shape(), axis);
    if (start + length > s.len) {
        throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") exceeds axis of size " + std::to_string(s.len));
    }
    Shape shape = x.shape();
    shape[axis] = length;
    auto out = detail::alloc<T>(shape);
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(xv.data() + (o * s.len + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
    }
    return detail::make_result<T>("narrow", shape, std::move(out), {&x}, [s, start, length](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t o = 0; o < s.outer; ++o) {
            T* dst = gx.data() + (o * s.len + start) * s.inner;
            const T* src = self.grad.data() + o * length * s.inner;
            for (std::size_t i = 0; i < length * s.inner; ++i) {
                dst[i] += src[i];
            }
        }
    });
}

/// Joins tensors that agree on every dimension except `axis`.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis)
{
    if (parts.empty()) {
        throw ContractError("concat: no inputs");
    }
    Shape shape = parts[0].shape();
    const auto first = detail::split_axis("concat", shape, axis);
    std::vector<std::size_t> lens;
    std::size_t total = 0;
    for (const auto& part : parts) {
        Shape a = part.shape();
        Shape b = shape;
        if (a.size() != b.size()) {
            throw DimensionError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
        }
        a[axis] = b[axis] = 0;
        if (a != b) {
            throw DimensionError("concat: shape mismatch " + shape_str(part.shape()) + " vs " + shape_str(shape));
        }
        lens.push_back(part.size(axis));
        total += part.size(axis);
    }
    shape[axis] = total;
    auto out = detail::alloc<T>(shape);
    const std::size_t outer = first.outer, inner = first.inner;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto pv = parts[p].values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.data() + o * lens[p] * inner, lens[p] * inner, out.data() + (o * total + offset) * inner);
        }
        offset += lens[p];
    }
    return detail::make_result<T>("concat", shape, std::move(out), parts,
                                  [lens, outer, inner, total](detail::Node<T>& self) {
                                      std::size_t offset = 0;
                                      for (std::size_t p = 0; p < lens.size(); ++p) {
                                          auto g = detail::parent_grad(self, p);
                                          if (!g.empty()) {
                                              for (std::size_t o = 0; o < outer; ++o) {
                                                  const T* src = self.grad.data() + (o * total + offset) * inner;
                                                  T* dst = g.data() + o * lens[p] * inner;
                                                  for (std::size_t i = 0; i < lens[p] * inner; ++i) {
                                                      dst[i] += src[i];
                                                  }
                                              }
                                          }
                                          offset += lens[p];
                                      }
                                  });
}

/// Stacks same-shape tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts)
{
    if (parts.empty()) {
        throw ContractError("stack: no inputs");
    }
    const Shape& inner_shape = parts[0].shape();
    const std::size_t inner = parts[0].numel();
    for (const auto& part : parts) {
        detail::require_same_shape("stack", part.shape(), inner_shape);
    }
    Shape shape{parts.size()};
    shape.insert(shape.end(), inner_shape.begin(), inner_shape.end());
    auto out = detail::alloc<T>(shape);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        std::copy_n(parts[p].values().data(), inner, out.data() + p * inner);
    }
    return detail::make_result<T>("stack", shape, std::move(out), parts, [inner](detail::Node<T>& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            auto g = detail::parent_grad(self, p);
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[p * inner + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x)
{
    auto out = detail::alloc<T>({1});
    T acc = 0;
    for (T v : x.values()) {
        acc += v;
    }
    out[0] = acc;
    return detail::make_result<T>("sum", {1}, std::move(out), {&x}, [](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (auto& g : gx) {
            g += self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x)
{
    if (x.numel() == 0) {
        throw ContractError("mean: empty tensor");
    }
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum over `axis`, which is removed from the shape.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis)
{
    const auto s = detail::split_axis("sum_axis", x.shape(), axis);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) {
        shape = {1};
    }
    auto out = detail::alloc<T>(shape);
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.len; ++j) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                out[o * s.inner + in] += xv[(o * s.len + j) * s.inner + in];
            }
        }
    }
    return detail::make_result<T>("sum_axis", shape, std::move(out), {&x}, [s](detail::Node<T>& self) {
        auto gx = detail::parent_grad(self, 0);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t j = 0; j < s.len; ++j) {
                for (std::size_t in = 0; in < s.inner; ++in) {
                    gx[(o * s.len + j) * s.inner + in] += self.grad[o * s.inner + in];
                }
            }
        }
    });
}

/// Maximum over `axis`; the gradient flows to the first maximal element.
template <typename T>
Tensor<T> max_axis(const Tensor<T>& x, std::size_t axis)
{
    const auto s = detail::split_axis("max_axis", x.shape(), axis);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) {
        shape = {1};
    }
    auto out = detail::alloc<T>(shape);
    std::vector<std::size_t> argmax(s.outer * s.inner);
    auto xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            std::size_t best = (o * s.len) * s.inner + in;
            for (std::size_t j = 1; j < s.len; ++j) {
                const std::size_t idx = (o * s.len + j) * s.inner + in;
                if (xv[idx] > xv[best]) {
                    best = idx;
                }
            }
            out[o * s.inner + in] = xv[best];
            argmax[o * s.inner + in] = best;
        }
    }
    return detail::make_result<T>("max_axis", shape, std::move(out), {&x},
                                  [argmax = std::move(argmax)](detail::Node<T>& self) {
                                      auto gx = detail::parent_grad(self, 0);
                                      for (std::size_t i = 0; i < argmax.size(); ++i) {
                                          gx[argmax[i]] += self.grad[i];
                                      }
                                  });
}

/// out[s] = sum of x[i] over i with segment[i] == s.
template <typename T>
Tensor<T> segment_sum(const Tensor<T>& x, std::span<const std::size_t> segment, std::size_t count)
{
    detail::require_rank("segment_sum", x.shape(), 1);
    if (segment.size() != x.numel()) {
        throw DimensionError("segment_sum: " + std::to_string(segment.size()) + " segment ids for " +
                             shape_str(x.shape()));
    }
    for (auto s : segment) {
        if (s >= count) {
            throw DimensionError("segment_sum: segment id out of range");
        }
    }
    auto out = detail::alloc<T>({count});
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[segment[i]] += xv[i];
    }
    std::vector<std::size_t> ids(segment.begin(), segment.end());
    return detail::make_result<T>("segment_sum", {count}, std::move(out), {&x},
                                  [ids = std::move(ids)](detail::Node<T>& self) {
                                      auto gx = detail::parent_grad(self, 0);
                                      for (std::size_t i = 0; i < ids.size(); ++i) {
                                          gx[i] += self.grad[ids[i]];
                                      }
                                  });
}

/// out[i] = x[index[i]].
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> index)
{
    detail::require_rank("gather", x.shape(), 1);
    for (auto i : index) {
        if (i >= x.numel()) {
            throw DimensionError("gather: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
        }
    }
    auto out = detail::alloc<T>({index.size()});
    auto xv = x.values();
    for (std::size_t i = 0; i < index.size(); ++i) {
        out[i] = xv[index[i]];
    }
    std::vector<std::size_t> ids(index.begin(), index.end());
    return detail::make_result<T>("gather", {index.size()}, std::move(out), {&x},
                                  [ids = std::move(ids)](detail::Node<T>& self) {
                                      auto gx = detail::parent_grad(self, 0);
                                      for (std::size_t i = 0; i < ids.size(); ++i) {
                                          gx[ids[i]] += self.grad[i];
                                      }
                                  });
}

/// Batch statistics of a standardization.
struct MomentStats {
    double mean = 0.0;
    double variance = 0.0;
};

/// (x - mean(x)) / sqrt(max(var(x), floor)) over a vector, with population
/// variance. Gradients flow through the batch mean and, when not floored, the
/// batch variance.
template <typename T>
Tensor<T> batch_standardize(const Tensor<T>& x, double variance_floor, MomentStats* stats = nullptr)
{
    detail::require_rank("batch_standardize", x.shape(), 1);
    const std::size_t m = x.numel();
    if (m == 0) {
        throw ContractError("batch_standardize: empty batch");
    }
    auto xv = x.values();
    double mu = 0;
    for (T v : xv) {
        mu += static_cast<double>(v);
    }
    mu /= static_cast<double>(m);
    double var = 0;
    for (T v : xv) {
        var += (static_cast<double>(v) - mu) * (static_cast<double>(v) - mu);
    }
    var /= static_cast<double>(m);
    if (stats) {
        *stats = {mu, var};
    }
    const bool floored = var < variance_floor;
    const T inv_std = static_cast<T>(1.0 / std::sqrt(floored ? variance_floor : var));
    auto out = detail::alloc<T>({m});
    for (std::size_t i = 0; i < m; ++i) {
        out[i] = (xv[i] - static_cast<T>(mu)) * inv_std;
    }
    return detail::make_result<T>("batch_standardize", {m}, std::move(out), {&x},
                                  [m, inv_std, floored](detail::Node<T>& self) {
                                      auto gx = detail::parent_grad(self, 0);
                                      T mean_g = 0, mean_gy = 0;
                                      for (std::size_t i = 0; i < m; ++i) {
                                          mean_g += self.grad[i];
                                          mean_gy += self.grad[i] * self.data[i];
                                      }
                                      mean_g /= static_cast<T>(m);
                                      mean_gy /= static_cast<T>(m);
                                      for (std::size_t i = 0; i < m; ++i) {
                                          const T centered = self.grad[i] - mean_g;
                                          gx[i] += inv_std * (floored ? centered : centered - self.data[i] * mean_gy);
                                      }
                                  });
}

}  // namespace ckqti
