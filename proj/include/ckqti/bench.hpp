// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <new>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "ckqti/attention.hpp"
#include "ckqti/memory.hpp"

namespace ckqti {

struct BenchConfig {
    AttentionConfig attention = default_attention();
    std::vector<std::size_t> lengths{250, 500, 1000, 2000, 4000};
    /// Runs whose estimated peak exceeds this are recorded as capped instead of executed.
    std::size_t cap_bytes = std::size_t{3} << 30;
    std::uint64_t seed = 7;

    static AttentionConfig default_attention()
    {
        auto c = AttentionConfig::with_dims(64, 8, 8, 31, 2);
        c.ffn_dim = 128;
        c.dropout = 0.0;
        return c;
    }
};

struct BenchRecord {
    AttentionVariant variant = AttentionVariant::separable;
    std::size_t n = 0;
    std::size_t peak_bytes = 0;
    double ms = 0.0;
    /// Not run; peak_bytes then holds the estimate.
    bool capped = false;
};

/// Conservative peak estimate for one float forward+backward: every layer's
/// attention activations plus their gradients, and the per-position block state.
inline std::size_t estimate_peak_bytes(std::size_t n, const AttentionConfig& c, AttentionVariant variant)
{
    const std::size_t per_layer = peak_activation_elements(n, c, variant) + n * (12 * c.model_dim + 2 * c.ffn_dim);
    return 2 * c.num_layers * per_layer * sizeof(float);
}

/// Peak live tensor bytes of one forward+backward through the encoder stack,
/// measured above the parameters.
inline BenchRecord bench_once(std::size_t n, AttentionVariant variant, const BenchConfig& config)
{
    BenchRecord record{variant, n, 0, 0.0, false};
    const auto estimate = estimate_peak_bytes(n, config.attention, variant);
    if (estimate > config.cap_bytes) {
        record.peak_bytes = estimate;
        record.capped = true;
        return record;
    }
    std::mt19937_64 rng(config.seed);
    std::vector<ConformerParams<float>> layers;
    for (std::size_t l = 0; l < config.attention.num_layers; ++l) {
        layers.push_back(init_conformer<float>(config.attention, rng));
    }
    try {
        const auto start = std::chrono::steady_clock::now();
        PeakScope scope;
        {
            Tensor<float> x({n, config.attention.model_dim});
            fill_uniform(x, 1.0f, rng);
            const ForwardContext ctx{};
            auto h = x;
            for (const auto& layer : layers) {
                h = conformer_block(h, layer, config.attention, variant, ctx);
            }
            backward(sum(h));
        }
        record.peak_bytes = scope.peak_bytes();
        record.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    } catch (const std::bad_alloc&) {
        record.peak_bytes = estimate;
        record.capped = true;
    }
    return record;
}

/// Standard then separable for every length, single-threaded.
inline std::vector<BenchRecord> bench_memory(const BenchConfig& config)
{
    config.attention.validate();
    if (config.lengths.empty()) {
        throw ConfigError("bench: no sequence lengths");
    }
    std::vector<BenchRecord> out;
    for (auto variant : {AttentionVariant::standard, AttentionVariant::separable}) {
        for (auto n : config.lengths) {
            if (n == 0) {
                throw ConfigError("bench: sequence lengths must be positive");
            }
            out.push_back(bench_once(n, variant, config));
        }
    }
    return out;
}

inline void write_bench_header(std::ostream& out) { out << "variant,n,peak_bytes,ms,status\n"; }

inline void write_bench_rows(std::ostream& out, std::span<const BenchRecord> records)
{
    for (const auto& r : records) {
        out << to_string(r.variant) << ',' << r.n << ',' << r.peak_bytes << ',' << r.ms << ','
            << (r.capped ? "capped" : "ok") << '\n';
    }
}

/// Appends rows, writing the header only when the file is new or empty.
inline void append_bench_csv(const std::filesystem::path& path, std::span<const BenchRecord> records)
{
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw Error("cannot open '" + path.string() + "' for appending");
    }
    if (fresh) {
        write_bench_header(out);
    }
    write_bench_rows(out, records);
}

struct PolyFit {
    std::vector<double> coefficients;  // constant term first
    double residual_norm = 0.0;
    double r_squared = 0.0;
};

/// Least-squares polynomial fit via normal equations on x scaled to [0, 1].
inline PolyFit fit_polynomial(std::span<const double> x, std::span<const double> y, std::size_t degree)
{
    const std::size_t m = degree + 1;
    if (x.size() != y.size() || x.size() < m) {
        throw ContractError("fit_polynomial: need at least degree + 1 points");
    }
    double xmax = 0;
    for (double v : x) {
        xmax = std::max(xmax, std::abs(v));
    }
    const double s = xmax > 0 ? xmax : 1.0;
    std::vector<std::vector<long double>> a(m, std::vector<long double>(m + 1, 0.0L));
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<long double> p(m, 1.0L);
        for (std::size_t j = 1; j < m; ++j) {
            p[j] = p[j - 1] * (x[i] / s);
        }
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < m; ++c) {
                a[r][c] += p[r] * p[c];
            }
            a[r][m] += p[r] * y[i];
        }
    }
    for (std::size_t col = 0; col < m; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < m; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) {
                pivot = r;
            }
        }
        std::swap(a[col], a[pivot]);
        if (a[col][col] == 0.0L) {
            throw NumericError("fit_polynomial: singular system");
        }
        for (std::size_t r = 0; r < m; ++r) {
            if (r != col) {
                const long double f = a[r][col] / a[col][col];
                for (std::size_t c = col; c <= m; ++c) {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    PolyFit fit;
    for (std::size_t j = 0; j < m; ++j) {
        fit.coefficients.push_back(static_cast<double>(a[j][m] / a[j][j] / std::pow(static_cast<long double>(s), j)));
    }
    double mean = 0;
    for (double v : y) {
        mean += v;
    }
    mean /= static_cast<double>(y.size());
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double pred = 0, power = 1;
        for (double c : fit.coefficients) {
            pred += c * power;
            power *= x[i];
        }
        ss_res += (y[i] - pred) * (y[i] - pred);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    fit.residual_norm = std::sqrt(ss_res);
    fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

struct MemoryShape {
    double separable_linear_r2 = 0.0;
    /// Linear residual norm over quadratic residual norm for the standard variant.
    double standard_quadratic_gain = 0.0;
    /// standard / separable peak at the longest uncapped common length.
    double peak_ratio = 0.0;
    std::size_t ratio_length = 0;
};

/// Growth-shape summary of a bench_memory sweep. Capped standard rows use their estimate.
inline MemoryShape analyze_memory_shape(std::span<const BenchRecord> records)
{
    std::vector<double> sx, sy, tx, ty;
    for (const auto& r : records) {
        auto& xs = r.variant == AttentionVariant::separable ? sx : tx;
        auto& ys = r.variant == AttentionVariant::separable ? sy : ty;
        xs.push_back(static_cast<double>(r.n));
        ys.push_back(static_cast<double>(r.peak_bytes));
    }
    MemoryShape shape;
    shape.separable_linear_r2 = fit_polynomial(sx, sy, 1).r_squared;
    const double lin = fit_polynomial(tx, ty, 1).residual_norm;
    const double quad = fit_polynomial(tx, ty, 2).residual_norm;
    shape.standard_quadratic_gain = quad > 0 ? lin / quad : std::numeric_limits<double>::infinity();
    for (const auto& s : records) {
        if (s.variant != AttentionVariant::separable || s.capped) {
            continue;
        }
        for (const auto& t : records) {
            if (t.variant == AttentionVariant::standard && t.n == s.n && s.n >= shape.ratio_length) {
                shape.ratio_length = s.n;
                shape.peak_ratio = static_cast<double>(t.peak_bytes) / static_cast<double>(s.peak_bytes);
            }
        }
    }
    return shape;
}

}  // namespace ckqti
