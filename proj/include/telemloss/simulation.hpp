#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telemloss/bias_model.hpp"
#include "telemloss/error.hpp"
#include "telemloss/stats.hpp"
#include "telemloss/text.hpp"

namespace telemloss {

/// Summary of the rows of one variant that reached the backend. Variance
/// uses the population convention (divisor n) so the decomposition below
/// is an exact identity.
struct ObservedArm {
    std::uint64_t n_observed = 0;
    double mean = 0.0;
    double variance = 0.0;
    double loss_rate = 0.0;
};

/// Hypothesis about the rows that were lost: their control mean and sd, and
/// how differently the treatment acts on them (beta_int).
struct LossScenario {
    double lost_mean_ctrl = 0.0;
    double lost_sd_ctrl = 0.0;
    double beta_int = 0.0;
    std::optional<double> lost_sd_trt;  // defaults to lost_sd_ctrl

    double sd_trt() const noexcept { return lost_sd_trt.value_or(lost_sd_ctrl); }
};

/// Reconstructed no-loss comparison.
struct SimulatedResult {
    double delta = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p_value = 1.0;
    double observed_delta = 0.0;
    double lost_mean_trt = 0.0;
    double full_mean_ctrl = 0.0;
    double full_mean_trt = 0.0;
    double full_variance_ctrl = 0.0;
    double full_variance_trt = 0.0;
    double n_full_ctrl = 0.0;
    double n_full_trt = 0.0;

    double relative_delta() const noexcept { return delta / full_mean_ctrl; }
};

namespace detail {

inline void check_loss_rate(double l, bool allow_one)
{
    const bool ok = std::isfinite(l) && l >= 0.0 && (allow_one ? l <= 1.0 : l < 1.0);
    if (!ok) {
        fail(ErrorCode::invalid_argument,
             "loss rate " + text::format_double(l) + (allow_one ? " outside [0, 1]" : " outside [0, 1)"));
    }
}

// p from erfc can underflow to 0 for |z| beyond ~38; keep it in (0, 1].
inline double positive_p(double p) noexcept
{
    return std::max(p, std::numeric_limits<double>::min());
}

}  // namespace detail

/// Mean of the full sample from its observed and lost parts.
inline double combine_mean(double l, double mean_obs, double mean_lost)
{
    detail::check_loss_rate(l, true);
    return (1.0 - l) * mean_obs + l * mean_lost;
}

/// Population variance of the full sample from the parts' population
/// variances and means.
inline double combine_variance(double l, double var_obs, double var_lost, double mean_obs,
                               double mean_lost)
{
    detail::check_loss_rate(l, true);
    require(var_obs >= 0.0 && var_lost >= 0.0, ErrorCode::invalid_argument,
            "variances must be non-negative");
    const double d = mean_obs - mean_lost;
    return (1.0 - l) * var_obs + l * var_lost + l * (1.0 - l) * d * d;
}

/// Mean of the lost treatment rows implied by the scenario.
inline double impute_lost_mean(double lost_mean_ctrl, double observed_delta, double beta_int) noexcept
{
    return lost_mean_ctrl + observed_delta + beta_int;
}

/// Sample sizes behind se(delta). `full` asks "what if nothing had been
/// lost" (n_observed / (1 - l)); `observed` keeps the observed counts, which
/// isolates the change in the point estimate from the change in power.
enum class SampleBasis { full, observed };

inline SimulatedResult simulate_treatment_effect(const ObservedArm& ctrl, const ObservedArm& trt,
                                                 const LossScenario& scenario,
                                                 SampleBasis basis = SampleBasis::full)
{
    detail::check_loss_rate(ctrl.loss_rate, false);
    detail::check_loss_rate(trt.loss_rate, false);
    require(ctrl.n_observed > 1 && trt.n_observed > 1, ErrorCode::invalid_argument,
            "each arm needs more than one observation");
    require(ctrl.variance >= 0.0 && trt.variance >= 0.0, ErrorCode::invalid_argument,
            "observed variances must be non-negative");
    require(scenario.lost_sd_ctrl >= 0.0 && scenario.sd_trt() >= 0.0, ErrorCode::invalid_argument,
            "lost standard deviations must be non-negative");

    SimulatedResult r;
    r.observed_delta = trt.mean - ctrl.mean;
    r.lost_mean_trt = impute_lost_mean(scenario.lost_mean_ctrl, r.observed_delta, scenario.beta_int);
    r.full_mean_ctrl = combine_mean(ctrl.loss_rate, ctrl.mean, scenario.lost_mean_ctrl);
    r.full_mean_trt = combine_mean(trt.loss_rate, trt.mean, r.lost_mean_trt);
    r.delta = r.full_mean_trt - r.full_mean_ctrl;

    const double lost_var_ctrl = scenario.lost_sd_ctrl * scenario.lost_sd_ctrl;
    const double lost_var_trt = scenario.sd_trt() * scenario.sd_trt();
    r.full_variance_ctrl = combine_variance(ctrl.loss_rate, ctrl.variance, lost_var_ctrl, ctrl.mean,
                                            scenario.lost_mean_ctrl);
    r.full_variance_trt =
        combine_variance(trt.loss_rate, trt.variance, lost_var_trt, trt.mean, r.lost_mean_trt);

    r.n_full_ctrl = static_cast<double>(ctrl.n_observed);
    r.n_full_trt = static_cast<double>(trt.n_observed);
    if (basis == SampleBasis::full) {
        r.n_full_ctrl /= 1.0 - ctrl.loss_rate;
        r.n_full_trt /= 1.0 - trt.loss_rate;
    }
    r.se = stats::welch_se(r.full_variance_trt, r.n_full_trt, r.full_variance_ctrl, r.n_full_ctrl);
    require(r.se > 0.0, ErrorCode::degenerate_variance, "standard error of delta is zero");
    r.z = r.delta / r.se;
    r.p_value = detail::positive_p(stats::two_sided_p(r.z));
    return r;
}

// ---------------------------------------------------------------------------
// Loss tolerance

/// Fixed characteristics of a platform: observed arm summaries (the loss
/// rates are overwritten per grid cell) and the lost-stratum statistics.
struct PlatformProfile {
    ObservedArm ctrl;
    ObservedArm trt;
    double lost_mean_ctrl = 0.0;
    double lost_sd_ctrl = 0.0;
    std::optional<double> lost_sd_trt;
};

struct ToleranceGrid {
    std::vector<double> l_values;
    std::vector<double> delta2_values;
    std::vector<std::vector<double>> p;  // [l index][delta2 index]
    std::vector<std::vector<bool>> safe;
    double alpha = kDefaultAlpha;
    std::vector<std::string> notes;

    std::size_t safe_count() const
    {
        std::size_t n = 0;
        for (const auto& row : safe) {
            n += static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
        }
        return n;
    }
};

inline std::vector<double> linspace(double lo, double hi, std::size_t count)
{
    require(count >= 1, ErrorCode::invalid_argument, "linspace needs at least one point");
    std::vector<double> v(count);
    if (count == 1) {
        v[0] = lo;
        return v;
    }
    for (std::size_t i = 0; i < count; ++i) {
        v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    }
    v.back() = hi;
    return v;
}

inline constexpr double kDefaultMaxLoss = 0.20;

/// Loss axis from 0 to 20%.
inline std::vector<double> default_loss_axis(std::size_t steps = 21)
{
    return linspace(0.0, kDefaultMaxLoss, steps);
}

/// delta'' axis from 0 to min(30% of the metric mean, 50% of its sd).
inline std::vector<double> default_delta2_axis(double mean, double sd, std::size_t steps = 21)
{
    return linspace(0.0, std::min(0.3 * std::fabs(mean), 0.5 * sd), steps);
}

/// Sweeps (l, delta'') with l_ctrl = l_trt = l, no observed delta, and
/// beta_int = delta''. A cell is safe when the simulated p stays above alpha,
/// i.e. the no-loss decision would match the observed "no effect" one.
inline ToleranceGrid tolerance_grid(const PlatformProfile& profile, std::span<const double> l_values,
                                    std::span<const double> delta2_values, double alpha = kDefaultAlpha)
{
    require(!l_values.empty() && !delta2_values.empty(), ErrorCode::invalid_argument,
            "grid axes must be non-empty");
    require(alpha > 0.0 && alpha < 1.0, ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
    for (std::size_t i = 0; i < l_values.size(); ++i) {
        detail::check_loss_rate(l_values[i], false);
        require(i == 0 || l_values[i] > l_values[i - 1], ErrorCode::invalid_argument,
                "loss axis must be strictly ascending");
    }
    for (std::size_t j = 0; j < delta2_values.size(); ++j) {
        require(std::isfinite(delta2_values[j]) && (j == 0 || delta2_values[j] > delta2_values[j - 1]),
                ErrorCode::invalid_argument, "delta'' axis must be finite and strictly ascending");
    }

    ToleranceGrid grid;
    grid.l_values.assign(l_values.begin(), l_values.end());
    grid.delta2_values.assign(delta2_values.begin(), delta2_values.end());
    grid.alpha = alpha;
    grid.p.assign(l_values.size(), std::vector<double>(delta2_values.size()));
    grid.safe.assign(l_values.size(), std::vector<bool>(delta2_values.size()));

    ObservedArm ctrl = profile.ctrl;
    ObservedArm trt = profile.trt;
    trt.mean = ctrl.mean;  // observed delta pinned to zero
    for (std::size_t i = 0; i < l_values.size(); ++i) {
        ctrl.loss_rate = trt.loss_rate = l_values[i];
        for (std::size_t j = 0; j < delta2_values.size(); ++j) {
            const LossScenario scenario{profile.lost_mean_ctrl, profile.lost_sd_ctrl, delta2_values[j],
                                        profile.lost_sd_trt};
            try {
                const auto r = simulate_treatment_effect(ctrl, trt, scenario);
                grid.p[i][j] = r.p_value;
                grid.safe[i][j] = r.p_value > alpha;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::degenerate_variance) {
                    throw;
                }
                grid.p[i][j] = std::numeric_limits<double>::quiet_NaN();
                grid.safe[i][j] = false;
                grid.notes.push_back("l=" + text::format_double(l_values[i]) +
                                     " delta2=" + text::format_double(delta2_values[j]) +
                                     ": degenerate variance");
            }
        }
    }
    return grid;
}

enum class Tail { lower, upper };

inline constexpr std::size_t kMinScenarioSample = 100;

/// Lost-data hypothesis taken from the poor-experience tail of a metric:
/// mean and population sd of the observations at or beyond its 10th
/// (or, for Tail::upper, 90th) percentile, nearest-rank.
inline LossScenario default_lost_scenario(std::span<const double> sample, Tail tail = Tail::lower,
                                          double fraction = 0.10)
{
    require(sample.size() >= kMinScenarioSample, ErrorCode::insufficient_data,
            "need at least " + std::to_string(kMinScenarioSample) + " observations, got " +
                std::to_string(sample.size()));
    require(fraction > 0.0 && fraction <= 1.0, ErrorCode::invalid_argument,
            "tail fraction must lie in (0, 1]");
    std::vector<double> sorted(sample.begin(), sample.end());
    std::ranges::sort(sorted);
    if (tail == Tail::upper) {
        std::ranges::reverse(sorted);
    }
    const auto rank = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size())));
    const double cut = sorted[std::max<std::size_t>(rank, 1) - 1];
    std::size_t end = 0;
    while (end < sorted.size() && (tail == Tail::lower ? sorted[end] <= cut : sorted[end] >= cut)) {
        ++end;
    }
    const auto m = stats::moments(std::span<const double>(sorted.data(), end));
    LossScenario s;
    s.lost_mean_ctrl = m.mean;
    s.lost_sd_ctrl = m.sd();
    return s;
}

}  // namespace telemloss
