#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "pam/errors.hpp"

namespace pam {

struct MeanEstimate {
    double mean = 0;
    double stderr_ = 0;  // standard error of the mean
    std::size_t n = 0;
};

inline MeanEstimate mean_stderr(std::span<const double> x) {
    require(!x.empty(), ErrorKind::InsufficientData, "mean of an empty sample");
    MeanEstimate e;
    e.n = x.size();
    // Welford keeps the variance stable for weights spanning many orders of magnitude.
    double m = 0, s = 0;
    std::size_t k = 0;
    for (double v : x) {
        ++k;
        const double d = v - m;
        m += d / static_cast<double>(k);
        s += d * (v - m);
    }
    e.mean = m;
    e.stderr_ = e.n > 1 ? std::sqrt(s / static_cast<double>(e.n - 1) / static_cast<double>(e.n)) : 0.0;
    return e;
}

/// Two-sided Kolmogorov-Smirnov distance sup |F_n - F| for a continuous F.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
    require(!x.empty(), ErrorKind::InsufficientData, "KS statistic of an empty sample");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

/// Pearson sample correlation.
inline double correlation(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorKind::InsufficientData, "correlation needs two equal samples");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0 && syy > 0, ErrorKind::DegenerateInput, "correlation of a constant sample");
    return sxy / std::sqrt(sxx * syy);
}

/// Standard error of a binomial proportion p estimated from n trials.
inline double binomial_stderr(double p, std::size_t n) { return std::sqrt(p * (1 - p) / static_cast<double>(n)); }

/// Ordinary least squares y = a + b x; returns (slope, r^2).
struct LineFit {
    double intercept = 0;
    double slope = 0;
    double r_squared = 0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorKind::InsufficientData, "line fit needs two points");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0, ErrorKind::DegenerateInput, "line fit with constant abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

} // namespace pam
