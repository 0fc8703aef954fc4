#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>

namespace telemloss::stats {

/// Standard normal CDF.
inline double normal_cdf(double x) noexcept
{
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Two-sided tail probability P(|Z| >= |z|). Uses erfc directly so the far
/// tail keeps relative precision instead of cancelling against 1.
inline double two_sided_p(double z) noexcept
{
    if (std::isnan(z)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return std::erfc(std::fabs(z) / std::numbers::sqrt2);
}

/// Upper tail of a chi-square with one degree of freedom.
inline double chi_square_1df_p(double statistic) noexcept
{
    if (statistic <= 0.0) {
        return 1.0;
    }
    return std::erfc(std::sqrt(statistic / 2.0));
}

/// Count, mean and population variance (divisor n) of a sample.
struct Moments {
    std::uint64_t n = 0;
    double mean = 0.0;
    double variance = 0.0;

    double sd() const noexcept { return std::sqrt(variance); }
};

/// Two-pass moments; the second pass keeps the variance accurate when the
/// mean is large relative to the spread.
inline Moments moments(std::span<const double> values) noexcept
{
    Moments m;
    m.n = values.size();
    if (values.empty()) {
        return m;
    }
    double sum = 0.0;
    bool constant = true;
    for (double v : values) {
        sum += v;
        constant = constant && v == values.front();
    }
    if (constant) {
        m.mean = values.front();
        return m;
    }
    m.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    double comp = 0.0;
    for (double v : values) {
        const double d = v - m.mean;
        ss += d * d;
        comp += d;
    }
    // Corrected two-pass: removes the residual from rounding in the mean.
    m.variance = (ss - comp * comp / static_cast<double>(values.size())) /
                 static_cast<double>(values.size());
    if (m.variance < 0.0) {
        m.variance = 0.0;
    }
    return m;
}

/// Unpooled standard error of a difference of two means.
inline double welch_se(double var_a, double n_a, double var_b, double n_b) noexcept
{
    return std::sqrt(var_a / n_a + var_b / n_b);
}

}  // namespace telemloss::stats
