// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ckqti/tensor.hpp"

namespace ckqti::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false)
{
    Tensor<T> t(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.mutable_values()) {
        v = static_cast<T>(dist(rng));
    }
    return t;
}

/// Row-major dense matrix in double precision, for oracles.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

template <typename T>
Mat to_mat(const Tensor<T>& t)
{
    Mat m(t.size(0), t.ndim() > 1 ? t.size(1) : 1);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        m.v[i] = static_cast<double>(t.values()[i]);
    }
    return m;
}

inline Mat mat_mul(const Mat& a, const Mat& b)
{
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0;
            for (std::size_t p = 0; p < a.cols; ++p) acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
    return c;
}

inline Mat mat_transpose(const Mat& a)
{
    Mat t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline Mat row_softmax(const Mat& a)
{
    Mat s(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double mx = -1e300, total = 0;
        for (std::size_t j = 0; j < a.cols; ++j) mx = std::max(mx, a(i, j));
        for (std::size_t j = 0; j < a.cols; ++j) total += std::exp(a(i, j) - mx);
        for (std::size_t j = 0; j < a.cols; ++j) s(i, j) = std::exp(a(i, j) - mx) / total;
    }
    return s;
}

inline double max_abs_diff(const Mat& a, const std::vector<double>& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b[i]));
    return m;
}

template <typename T>
std::vector<double> as_doubles(const Tensor<T>& t)
{
    return {t.values().begin(), t.values().end()};
}

}  // namespace ckqti::testing
