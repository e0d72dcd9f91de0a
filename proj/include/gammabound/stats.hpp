#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "gammabound/errors.hpp"
#include "gammabound/rng.hpp"

namespace gammabound {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

/// Inverse standard-normal CDF. Rational approximation (Acklam) polished by
/// one Newton step against the erfc-based CDF; absolute error < 1e-9 on (0,1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0,1)");

    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;

    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    const double e = normal_cdf(x) - p;
    x -= e / normal_pdf(x);
    return x;
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw EmptyDataset("mean of empty range");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Unbiased sample variance; 0 for fewer than two values.
inline double sample_variance(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(n - 1);
}

inline double sample_sd(std::span<const double> v) { return std::sqrt(sample_variance(v)); }

/// Left-continuous empirical quantile: inf{q : F_n(q) >= z}.
inline double quantile_sorted(std::span<const double> sorted, double z) {
    if (sorted.empty()) throw EmptyDataset("quantile of empty range");
    if (!(z > 0.0 && z <= 1.0)) throw DomainError("quantile level must lie in (0,1]");
    const std::size_t n = sorted.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(z * static_cast<double>(n)));
    if (k == 0) k = 1;
    if (k > n) k = n;
    return sorted[k - 1];
}

inline double quantile(std::vector<double> v, double z) {
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, z);
}

/// Weighted left-continuous quantile: smallest value whose cumulative weight
/// reaches z * (total weight). Zero-weight points are ignored.
inline double weighted_quantile(std::span<const double> values, std::span<const double> weights,
                                double z) {
    if (values.size() != weights.size())
        throw InvalidArgument("weighted_quantile: length mismatch");
    std::vector<std::pair<double, double>> vw;
    vw.reserve(values.size());
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (weights[i] < 0.0) throw InvalidArgument("weighted_quantile: negative weight");
        if (weights[i] > 0.0) {
            vw.emplace_back(values[i], weights[i]);
            total += weights[i];
        }
    }
    if (vw.empty() || total <= 0.0) throw EmptyDataset("weighted_quantile: no positive weight");
    std::sort(vw.begin(), vw.end());
    const double target = z * total;
    double cum = 0.0;
    for (const auto& [v, w] : vw) {
        cum += w;
        if (cum >= target * (1.0 - 1e-12)) return v;
    }
    return vw.back().first;
}

inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidArgument("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw InvalidArgument("pearson: need at least two points");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw ZeroVariance("pearson: constant input");
    return sxy / std::sqrt(sxx * syy);
}

/// Mid-ranks (ties averaged), 1-based.
inline std::vector<double> ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman_correlation(std::span<const double> x, std::span<const double> y) {
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    return pearson_correlation(rx, ry);
}

/// One-sided permutation p-value for H1: spearman(x, y) > 0. Permutes y.
inline double spearman_permutation_pvalue(std::span<const double> x, std::span<const double> y,
                                          std::size_t n_perm, Rng& rng) {
    const double observed = spearman_correlation(x, y);
    const auto rx = ranks(x);
    std::vector<double> ry = ranks(y);
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n_perm; ++p) {
        rng.shuffle(ry);
        if (pearson_correlation(rx, ry) >= observed) ++hits;
    }
    return static_cast<double>(hits + 1) / static_cast<double>(n_perm + 1);
}

}  // namespace gammabound
