// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ckqti/ops.hpp"

namespace ckqti {

/// Gaussian soft-match kernels over cosine similarity, stored with ascending means.
struct KernelBank {
    static constexpr std::size_t kSize = 10;

    std::vector<double> mus{-0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    std::vector<double> sigmas{0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.001};

    [[nodiscard]] std::size_t size() const { return mus.size(); }

    void validate() const
    {
        if (mus.size() != kSize || sigmas.size() != kSize) {
            throw ConfigError("kernel bank must hold exactly 10 kernels");
        }
        for (std::size_t i = 0; i < mus.size(); ++i) {
            if (mus[i] < -1.0 || mus[i] > 1.0) {
                throw ConfigError("kernel mean outside [-1, 1]");
            }
            if (i > 0 && !(mus[i] > mus[i - 1])) {
                throw ConfigError("kernel means must be strictly increasing");
            }
            if (!(sigmas[i] > 0.0)) {
                throw ConfigError("kernel widths must be positive");
            }
        }
    }
};

struct WindowConfig {
    std::size_t window_len = 300;
    std::size_t stride = 100;

    void validate() const
    {
        if (window_len == 0 || stride == 0 || stride > window_len) {
            throw ConfigError("window config requires 0 < stride <= window_len");
        }
    }

    /// Windows start at 0, stride, 2*stride, ... until one covers the last position.
    [[nodiscard]] std::size_t window_count(std::size_t n) const
    {
        if (n <= window_len) {
            return 1;
        }
        return 1 + (n - window_len + stride - 1) / stride;
    }
};

/// Cosine similarity of q[d] against each row of doc[n x d]. A zero-norm
/// vector on either side scores 0 and passes no gradient.
template <typename T>
Tensor<T> interaction_row(const Tensor<T>& q, const Tensor<T>& doc)
{
    if (q.ndim() != 1 || doc.ndim() != 2 || doc.size(1) != q.size(0)) {
        throw DimensionError("interaction_row: query " + shape_str(q.shape()) + " vs document " +
                             shape_str(doc.shape()));
    }
    const std::size_t n = doc.size(0), d = doc.size(1);
    auto out = detail::alloc<T>({n});
    const T* Q = q.values().data();
    const T* D = doc.values().data();
    T qn = 0;
    for (std::size_t c = 0; c < d; ++c) {
        qn += Q[c] * Q[c];
    }
    qn = std::sqrt(qn);
    for (std::size_t j = 0; j < n; ++j) {
        T dot = 0, dn = 0;
        for (std::size_t c = 0; c < d; ++c) {
            dot += Q[c] * D[j * d + c];
            dn += D[j * d + c] * D[j * d + c];
        }
        dn = std::sqrt(dn);
        out[j] = (qn > T(0) && dn > T(0)) ? std::clamp(dot / (qn * dn), T(-1), T(1)) : T(0);
    }
    return detail::make_result<T>("interaction_row", {n}, std::move(out), {&q, &doc}, [n, d](detail::Node<T>& self) {
        const T* Q = self.parents[0]->data.data();
        const T* D = self.parents[1]->data.data();
        auto gq = detail::parent_grad(self, 0);
        auto gd = detail::parent_grad(self, 1);
        T qn = 0;
        for (std::size_t c = 0; c < d; ++c) {
            qn += Q[c] * Q[c];
        }
        qn = std::sqrt(qn);
        if (qn == T(0)) {
            return;
        }
        for (std::size_t j = 0; j < n; ++j) {
            const T* x = D + j * d;
            T dn = 0;
            for (std::size_t c = 0; c < d; ++c) {
                dn += x[c] * x[c];
            }
            dn = std::sqrt(dn);
            if (dn == T(0)) {
                continue;
            }
            const T g = self.grad[j];
            const T cosv = self.data[j];
            const T inv = T(1) / (qn * dn);
            for (std::size_t c = 0; c < d; ++c) {
                if (!gq.empty()) {
                    gq[c] += g * (x[c] * inv - cosv * Q[c] / (qn * qn));
                }
                if (!gd.empty()) {
                    gd[j * d + c] += g * (Q[c] * inv - cosv * x[c] / (dn * dn));
                }
            }
        }
    });
}

namespace detail {

/// Kernel features over row[start, start + len). Positions beyond the row are
/// padding and contribute nothing.
template <typename T>
Tensor<T> window_kernel_features(const Tensor<T>& row, std::size_t start, std::size_t len, const KernelBank& bank,
                                 double log_epsilon)
{
    const std::size_t n = row.numel();
    const std::size_t end = std::min(n, start + len);
    const std::size_t k = bank.size();
    auto out = alloc<T>({k});
    auto rv = row.values();
    for (std::size_t ki = 0; ki < k; ++ki) {
        const T mu = static_cast<T>(bank.mus[ki]);
        const T inv_two_var = static_cast<T>(1.0 / (2.0 * bank.sigmas[ki] * bank.sigmas[ki]));
        T total = 0;
        for (std::size_t j = start; j < end; ++j) {
            const T diff = rv[j] - mu;
            total += std::exp(-diff * diff * inv_two_var);
        }
        out[ki] = std::log(static_cast<T>(log_epsilon) + total);
    }
    return make_result<T>(
        "kernel_features", {k}, std::move(out), {&row}, [start, end, bank, log_epsilon](Node<T>& self) {
            auto gr = parent_grad(self, 0);
            const T* r = self.parents[0]->data.data();
            for (std::size_t ki = 0; ki < bank.size(); ++ki) {
                const T mu = static_cast<T>(bank.mus[ki]);
                const T var = static_cast<T>(bank.sigmas[ki] * bank.sigmas[ki]);
                const T inv_two_var = T(1) / (T(2) * var);
                // d log(eps + S) = dS / (eps + S), with eps + S = exp(feature).
                const T coeff = self.grad[ki] / std::exp(self.data[ki]);
                for (std::size_t j = start; j < end; ++j) {
                    const T diff = r[j] - mu;
                    gr[j] += coeff * std::exp(-diff * diff * inv_two_var) * (-diff / var);
                }
            }
        });
}

}  // namespace detail

/// log(eps + sum_j exp(-(row_j - mu_k)^2 / (2 sigma_k^2))) for each kernel k.
template <typename T>
Tensor<T> kernel_features(const Tensor<T>& row, const KernelBank& bank, double log_epsilon = 1e-10)
{
    detail::require_rank("kernel_features", row.shape(), 1);
    return detail::window_kernel_features(row, 0, row.numel(), bank, log_epsilon);
}

/// Kernel features of every window of one query term's interaction row,
/// combined by element-wise maximum across windows.
template <typename T>
Tensor<T> windowed_pool_term(const Tensor<T>& row, const WindowConfig& wcfg, const KernelBank& bank,
                             double log_epsilon = 1e-10)
{
    detail::require_rank("windowed_pool_term", row.shape(), 1);
    if (row.numel() == 0) {
        throw ContractError("windowed_pool_term: empty interaction row");
    }
    const std::size_t windows = wcfg.window_count(row.numel());
    if (windows == 1) {
        return detail::window_kernel_features(row, 0, wcfg.window_len, bank, log_epsilon);
    }
    std::vector<Tensor<T>> features;
    features.reserve(windows);
    for (std::size_t w = 0; w < windows; ++w) {
        features.push_back(detail::window_kernel_features(row, w * wcfg.stride, wcfg.window_len, bank, log_epsilon));
    }
    return max_axis(stack(features), 0);
}

/// Features of a term with no interaction at all (every window empty).
template <typename T>
Tensor<T> empty_interaction_features(const KernelBank& bank, double log_epsilon = 1e-10)
{
    return Tensor<T>::full({bank.size()}, static_cast<T>(std::log(log_epsilon)));
}

/// weight . features + bias.
template <typename T>
Tensor<T> latent_term_score(const Tensor<T>& features, const Tensor<T>& weight, const Tensor<T>& bias)
{
    detail::require_same_shape("latent_term_score", features.shape(), weight.shape());
    return add(sum(mul(weight, features)), bias);
}

}  // namespace ckqti
