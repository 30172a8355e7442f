// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "ckqti/tensor.hpp"

namespace ckqti {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates where one-sided differences disagree (a kink such as relu at 0).
    std::size_t skipped_kinks = 0;
};

struct GradCheckOptions {
    double epsilon = 1e-6;
    double floor = 1e-5;
    /// Relative disagreement between forward and backward one-sided slopes
    /// above which a coordinate is treated as non-differentiable and skipped.
    double kink_tolerance = 1e-4;
    /// Check at most this many coordinates per parameter (evenly strided); 0 = all.
    std::size_t max_coords_per_param = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must rebuild its graph from `params` on every call and be
/// deterministic. Returns max |analytic - numeric| / max(|analytic|, |numeric|, floor).
template <typename T>
GradCheckReport finite_difference_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
                                        const GradCheckOptions& options = {})
{
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    {
        auto loss = f();
        backward(loss);
    }
    std::vector<std::vector<T>> analytic;
    for (auto& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), T(0));
        }
    }

    auto eval = [&]() {
        NoGradGuard guard;
        return static_cast<double>(f().item());
    };

    GradCheckReport report;
    const double h = options.epsilon;
    const double f0 = eval();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto values = params[pi].mutable_values();
        const std::size_t stride =
            options.max_coords_per_param && values.size() > options.max_coords_per_param
                ? (values.size() + options.max_coords_per_param - 1) / options.max_coords_per_param
                : 1;
        for (std::size_t i = 0; i < values.size(); i += stride) {
            const T original = values[i];
            values[i] = static_cast<T>(original + h);
            const double fp = eval();
            values[i] = static_cast<T>(original - h);
            const double fm = eval();
            values[i] = original;

            const double forward_slope = (fp - f0) / h;
            const double backward_slope = (f0 - fm) / h;
            const double slope_scale = std::max({std::abs(forward_slope), std::abs(backward_slope), 1.0});
            if (std::abs(forward_slope - backward_slope) > options.kink_tolerance * slope_scale) {
                ++report.skipped_kinks;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = static_cast<double>(analytic[pi][i]);
            const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
            report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
            ++report.checked;
        }
        params[pi].zero_grad();
    }
    return report;
}

}  // namespace ckqti
