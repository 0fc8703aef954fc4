#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "telemloss/error.hpp"
#include "telemloss/stats.hpp"

namespace telemloss {

inline constexpr double kDefaultAlpha = 0.01;

/// Coefficients of the outcome model with loss:
///   Y = beta_0 + beta_T*T + beta_L*L + beta_int*T*L + e
/// plus the loss rates E(L|T=0) and E(L|T=1).
struct BiasDecomposition {
    double beta_0 = 0.0;
    double beta_T = 0.0;
    double beta_L = 0.0;
    double beta_int = 0.0;
    double l_ctrl = 0.0;
    double l_trt = 0.0;

    /// beta_L is never estimable from observed rows alone (lost Y is unseen);
    /// it comes from a hypothesis about the lost control mean.
    static BiasDecomposition from_scenario(double observed_mean_ctrl, double lost_mean_ctrl,
                                           double beta_int, double l_ctrl, double l_trt)
    {
        require(l_ctrl >= 0.0 && l_ctrl <= 1.0 && l_trt >= 0.0 && l_trt <= 1.0,
                ErrorCode::invalid_argument, "loss rates must lie in [0, 1]");
        BiasDecomposition d;
        d.beta_0 = observed_mean_ctrl;
        d.beta_L = lost_mean_ctrl - observed_mean_ctrl;
        d.beta_int = beta_int;
        d.l_ctrl = l_ctrl;
        d.l_trt = l_trt;
        return d;
    }
};

struct BiasTerms {
    double correlation = 0.0;  // beta_L * (l_trt - l_ctrl)
    double interaction = 0.0;  // beta_int * l_trt

    double total() const noexcept { return correlation + interaction; }
};

/// Expected difference between the observed delta and the treatment effect.
inline BiasTerms bias_delta(const BiasDecomposition& d) noexcept
{
    return {d.beta_L * (d.l_trt - d.l_ctrl), d.beta_int * d.l_trt};
}

enum class TestKind { two_proportion_z, chi_square_srm, welch_z };

constexpr std::string_view to_string(TestKind k) noexcept
{
    switch (k) {
    case TestKind::two_proportion_z: return "two_proportion_z";
    case TestKind::chi_square_srm: return "chi_square_srm";
    case TestKind::welch_z: return "welch_z";
    }
    return "unknown";
}

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    bool significant = false;
    TestKind test = TestKind::two_proportion_z;

    static TestResult make(TestKind kind, double statistic, double p, double alpha)
    {
        return {statistic, p, p < alpha, kind};
    }

    bool operator==(const TestResult&) const = default;
};

/// Pooled two-proportion z-test of lost/expected between arms. The statistic
/// is positive when treatment loses more.
inline TestResult loss_rate_imbalance_test(std::uint64_t lost_ctrl, std::uint64_t n_ctrl,
                                           std::uint64_t lost_trt, std::uint64_t n_trt,
                                           double alpha = kDefaultAlpha)
{
    require(n_ctrl > 0 && n_trt > 0, ErrorCode::degenerate_sample, "both arms need expected events");
    require(lost_ctrl <= n_ctrl && lost_trt <= n_trt, ErrorCode::invalid_argument,
            "lost count exceeds expected count");
    const double nc = static_cast<double>(n_ctrl);
    const double nt = static_cast<double>(n_trt);
    const double pc = static_cast<double>(lost_ctrl) / nc;
    const double pt = static_cast<double>(lost_trt) / nt;
    const double pooled = static_cast<double>(lost_ctrl + lost_trt) / (nc + nt);
    const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / nc + 1.0 / nt));
    if (se == 0.0) {
        // Nothing or everything lost in both arms: no evidence of imbalance.
        return TestResult::make(TestKind::two_proportion_z, 0.0, 1.0, alpha);
    }
    const double z = (pt - pc) / se;
    return TestResult::make(TestKind::two_proportion_z, z, stats::two_sided_p(z), alpha);
}

/// Chi-square goodness of fit (1 dof) of arm counts against the configured
/// allocation, `expected_ratio` = control share / treatment share.
inline TestResult srm_test(std::uint64_t n_ctrl, std::uint64_t n_trt, double expected_ratio = 1.0,
                           double alpha = kDefaultAlpha)
{
    require(n_ctrl + n_trt > 0, ErrorCode::degenerate_sample, "no units assigned to either arm");
    require(expected_ratio > 0.0 && std::isfinite(expected_ratio), ErrorCode::invalid_argument,
            "expected ratio must be positive");
    const double total = static_cast<double>(n_ctrl + n_trt);
    const double expect_ctrl = total * expected_ratio / (1.0 + expected_ratio);
    const double expect_trt = total / (1.0 + expected_ratio);
    const double dc = static_cast<double>(n_ctrl) - expect_ctrl;
    const double dt = static_cast<double>(n_trt) - expect_trt;
    const double chi2 = dc * dc / expect_ctrl + dt * dt / expect_trt;
    return TestResult::make(TestKind::chi_square_srm, chi2, stats::chi_square_1df_p(chi2), alpha);
}

}  // namespace telemloss
