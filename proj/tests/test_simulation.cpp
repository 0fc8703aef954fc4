#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "telemloss/simulation.hpp"

using namespace telemloss;

namespace {

// n values with exactly the given mean and population sd (n even).
std::vector<double> materialize(std::size_t n, double mean, double sd)
{
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = mean + (i % 2 == 0 ? sd : -sd);
    return v;
}

struct Sample {
    double mean;
    double var;
};

Sample direct(const std::vector<double>& v)
{
    long double s = 0;
    for (double x : v) s += x;
    const long double m = s / v.size();
    long double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return {static_cast<double>(m), static_cast<double>(ss / v.size())};
}

double welch_z(double delta, double vt, double nt, double vc, double nc)
{
    return delta / std::sqrt(vt / nt + vc / nc);
}

double boost_two_sided(double z)
{
    return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::fabs(z)));
}

}  // namespace

TEST(CombineMean, Examples)
{
    EXPECT_EQ(combine_mean(0.0, 3.0, 100.0), 3.0);
    EXPECT_EQ(combine_mean(1.0, 3.0, 100.0), 100.0);
    EXPECT_DOUBLE_EQ(combine_mean(0.5, 1.5, 3.5), 2.5);
    EXPECT_THROW(combine_mean(1.5, 1, 1), Error);
    EXPECT_THROW(combine_mean(-0.1, 1, 1), Error);
}

TEST(CombineVariance, Examples)
{
    // {1,2} observed, {3,4} lost: the full {1,2,3,4} has variance 1.25.
    EXPECT_DOUBLE_EQ(combine_variance(0.5, 0.25, 0.25, 1.5, 3.5), 1.25);
    EXPECT_DOUBLE_EQ(combine_variance(0.3, 2.0, 2.0, 5.0, 5.0), 2.0);
    EXPECT_THROW(combine_variance(0.5, -1.0, 0.0, 0, 0), Error);
}

TEST(CombineVariance, DecompositionIdentityOnRandomSamples)
{
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> size(1, 400);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int rep = 0; rep < 1000; ++rep) {
        const int n_obs = size(rng), n_lost = size(rng);
        const double shift = 5.0 * noise(rng), scale = std::exp(noise(rng));
        std::vector<double> obs(n_obs), lost(n_lost);
        for (auto& x : obs) x = 10.0 + scale * noise(rng);
        for (auto& x : lost) x = 10.0 + shift + 2.0 * scale * noise(rng);
        std::vector<double> all = obs;
        all.insert(all.end(), lost.begin(), lost.end());
        const auto o = direct(obs), l = direct(lost), f = direct(all);
        const double rate = static_cast<double>(n_lost) / (n_obs + n_lost);
        EXPECT_NEAR(combine_mean(rate, o.mean, l.mean), f.mean, 1e-10 * std::max(1.0, std::fabs(f.mean)));
        EXPECT_NEAR(combine_variance(rate, o.var, l.var, o.mean, l.mean), f.var, 1e-10 * std::max(1.0, f.var));
    }
}

TEST(ImputeLostMean, Examples)
{
    EXPECT_DOUBLE_EQ(impute_lost_mean(2.0, 0.1, 0.05), 2.15);
    EXPECT_DOUBLE_EQ(impute_lost_mean(2.0, 0.3, -0.3), 2.0);
}

TEST(SimulateTreatmentEffect, NullScenario)
{
    const ObservedArm ctrl{10'000, 5.0, 4.0, 0.1};
    const ObservedArm trt{10'000, 5.0, 4.0, 0.1};
    const auto r = simulate_treatment_effect(ctrl, trt, {4.0, 2.0, 0.0, {}});
    EXPECT_EQ(r.delta, 0.0);
    EXPECT_EQ(r.z, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
}

TEST(SimulateTreatmentEffect, InteractionOnlyMatchesMaterializedSamples)
{
    // 900 observed + 100 lost per arm: l = 0.1, delta' = 0, beta_int = 0.5.
    const double mean = 3.0, sd = 1.0, lost_mean = 2.0, lost_sd = 0.8, beta = 0.5;
    const ObservedArm ctrl{900, mean, sd * sd, 0.1};
    const ObservedArm trt{900, mean, sd * sd, 0.1};
    const auto r = simulate_treatment_effect(ctrl, trt, {lost_mean, lost_sd, beta, {}});
    EXPECT_NEAR(r.delta, 0.05, 1e-12);

    auto full_c = materialize(900, mean, sd);
    auto lost_c = materialize(100, lost_mean, lost_sd);
    full_c.insert(full_c.end(), lost_c.begin(), lost_c.end());
    auto full_t = materialize(900, mean, sd);
    auto lost_t = materialize(100, lost_mean + beta, lost_sd);
    full_t.insert(full_t.end(), lost_t.begin(), lost_t.end());
    const auto c = direct(full_c), t = direct(full_t);

    EXPECT_NEAR(r.delta, t.mean - c.mean, 1e-12);
    EXPECT_NEAR(r.full_variance_ctrl, c.var, 1e-12);
    EXPECT_NEAR(r.full_variance_trt, t.var, 1e-12);
    EXPECT_NEAR(r.n_full_ctrl, 1000.0, 1e-9);
    const double z = welch_z(t.mean - c.mean, t.var, 1000, c.var, 1000);
    EXPECT_NEAR(r.z, z, 1e-9);
    EXPECT_NEAR(r.p_value, boost_two_sided(z), 1e-12);
}

TEST(SimulateTreatmentEffect, EqualLossShortcut)
{
    std::mt19937_64 rng(37);
    std::uniform_real_distribution<double> u(-3.0, 3.0), l(0.0, 0.9), v(0.1, 4.0);
    for (int rep = 0; rep < 1000; ++rep) {
        const double loss = l(rng);
        const ObservedArm ctrl{1000, u(rng), v(rng), loss};
        const ObservedArm trt{1200, u(rng), v(rng), loss};
        const LossScenario s{u(rng), std::sqrt(v(rng)), u(rng), {}};
        const auto r = simulate_treatment_effect(ctrl, trt, s);
        const double expected = (trt.mean - ctrl.mean) + loss * s.beta_int;
        EXPECT_NEAR(r.delta, expected, 1e-12 * std::max(1.0, std::fabs(expected)));
    }
}

TEST(SimulateTreatmentEffect, DeltaMatchesBiasModel)
{
    // Full minus observed delta is the bias with beta_L = lost_mean_ctrl - observed ctrl mean.
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-3.0, 3.0), l(0.0, 0.5);
    for (int rep = 0; rep < 500; ++rep) {
        const ObservedArm ctrl{500, u(rng), 1.0, l(rng)};
        const ObservedArm trt{500, u(rng), 1.0, l(rng)};
        const LossScenario s{u(rng), 1.0, u(rng), {}};
        const auto r = simulate_treatment_effect(ctrl, trt, s);
        BiasDecomposition d;
        d.beta_L = s.lost_mean_ctrl - ctrl.mean;
        d.beta_T = r.observed_delta;
        d.beta_int = s.beta_int;
        d.l_ctrl = ctrl.loss_rate;
        d.l_trt = trt.loss_rate;
        const double bias = bias_delta(d).total();
        EXPECT_NEAR(r.delta - r.observed_delta, bias, 1e-12);
    }
}

TEST(SimulateTreatmentEffect, ZeroLossIsObservedWelchTest)
{
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> u(-3.0, 3.0), v(0.1, 4.0);
    for (int rep = 0; rep < 500; ++rep) {
        const ObservedArm ctrl{800, u(rng), v(rng), 0.0};
        const ObservedArm trt{900, u(rng), v(rng), 0.0};
        const LossScenario s{u(rng) * 100, 50.0, u(rng) * 100, {}};
        const auto r = simulate_treatment_effect(ctrl, trt, s);
        EXPECT_EQ(r.delta, trt.mean - ctrl.mean);
        EXPECT_DOUBLE_EQ(r.se, std::sqrt(trt.variance / 900 + ctrl.variance / 800));
        EXPECT_EQ(r.full_variance_ctrl, ctrl.variance);
    }
}

TEST(SimulateTreatmentEffect, MissingAtRandomOnlyChangesPower)
{
    // Lost rows look like the observed ones and the treatment shifts them by delta'.
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> u(-1.0, 1.0), l(0.01, 0.5), v(0.5, 4.0);
    for (int rep = 0; rep < 500; ++rep) {
        const double loss = l(rng);
        const ObservedArm ctrl{5000, 10.0 + u(rng), v(rng), loss};
        const ObservedArm trt{5000, 10.0 + u(rng), v(rng), loss};
        LossScenario s{ctrl.mean, std::sqrt(ctrl.variance), 0.0, std::sqrt(trt.variance)};
        const double z_obs = welch_z(trt.mean - ctrl.mean, trt.variance, 5000, ctrl.variance, 5000);

        const auto same_n = simulate_treatment_effect(ctrl, trt, s, SampleBasis::observed);
        EXPECT_NEAR(same_n.delta, trt.mean - ctrl.mean, 1e-12);
        EXPECT_NEAR(same_n.full_variance_ctrl, ctrl.variance, 1e-12);
        EXPECT_NEAR(same_n.full_variance_trt, trt.variance, 1e-12);
        EXPECT_NEAR(same_n.z, z_obs, 1e-9 * std::max(1.0, std::fabs(z_obs)));

        const auto full = simulate_treatment_effect(ctrl, trt, s);
        EXPECT_NEAR(full.z * std::sqrt(1.0 - loss), z_obs, 1e-9 * std::max(1.0, std::fabs(z_obs)));
    }
}

TEST(SimulateTreatmentEffect, LostSdOverride)
{
    const ObservedArm arm{1000, 1.0, 1.0, 0.2};
    const auto a = simulate_treatment_effect(arm, arm, {1.0, 1.0, 0.0, {}});
    const auto b = simulate_treatment_effect(arm, arm, {1.0, 1.0, 0.0, 3.0});
    EXPECT_EQ(a.full_variance_trt, a.full_variance_ctrl);
    EXPECT_NEAR(b.full_variance_trt, 0.8 + 0.2 * 9.0, 1e-12);
}

TEST(SimulateTreatmentEffect, Guards)
{
    const ObservedArm flat{100, 1.0, 0.0, 0.1};
    try {
        simulate_treatment_effect(flat, flat, {1.0, 0.0, 0.0, {}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::degenerate_variance);
    }
    const ObservedArm all_lost{100, 1.0, 1.0, 1.0};
    EXPECT_THROW(simulate_treatment_effect(all_lost, all_lost, {}), Error);
    const ObservedArm one{1, 1.0, 1.0, 0.0};
    EXPECT_THROW(simulate_treatment_effect(one, one, {}), Error);
    const ObservedArm ok{100, 1.0, 1.0, 0.0};
    EXPECT_THROW(simulate_treatment_effect(ok, ok, {0.0, -1.0, 0.0, {}}), Error);
}

namespace {

PlatformProfile profile(double mean, double var, std::uint64_t n, double lost_mean, double lost_sd)
{
    PlatformProfile p;
    p.ctrl = {n, mean, var, 0.0};
    p.trt = p.ctrl;
    p.lost_mean_ctrl = lost_mean;
    p.lost_sd_ctrl = lost_sd;
    return p;
}

}  // namespace

TEST(ToleranceGrid, AnchorsAreSafeForAnyAlpha)
{
    const auto p = profile(100.0, 400.0, 50'000, 60.0, 10.0);
    const auto ls = default_loss_axis();
    const auto ds = default_delta2_axis(100.0, 20.0);
    for (double alpha : {0.01, 0.5, 0.999}) {
        const auto g = tolerance_grid(p, ls, ds, alpha);
        for (std::size_t i = 0; i < ls.size(); ++i) EXPECT_TRUE(g.safe[i][0]);
        for (std::size_t j = 0; j < ds.size(); ++j) EXPECT_TRUE(g.safe[0][j]);
        EXPECT_EQ(g.p[0][0], 1.0);
    }
}

TEST(ToleranceGrid, SingleCellExample)
{
    // l = 0.1 and delta'' = 0.5: simulated delta 0.05 on n = 10 000 per arm.
    const auto p = profile(3.0, 1.0, 10'000, 2.0, 1.0);
    const std::vector<double> l{0.1}, d{0.5};
    const auto g = tolerance_grid(p, l, d);
    const auto r = simulate_treatment_effect({10'000, 3.0, 1.0, 0.1}, {10'000, 3.0, 1.0, 0.1}, {2.0, 1.0, 0.5, {}});
    EXPECT_NEAR(r.delta, 0.05, 1e-12);
    EXPECT_EQ(g.p[0][0], r.p_value);
    EXPECT_EQ(g.safe[0][0], r.p_value > 0.01);
}

TEST(ToleranceGrid, MonotoneAndContiguous)
{
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    for (int rep = 0; rep < 30; ++rep) {
        const double mean = 100.0 * u(rng), sd = 30.0 * u(rng);
        const auto p = profile(mean, sd * sd, 10'000 + rng() % 100'000, mean * (0.3 + 0.5 * u(rng)), sd * u(rng) / 2);
        const auto ls = linspace(0.0, 0.3, 31);
        const auto ds = default_delta2_axis(mean, sd, 31);
        const auto g = tolerance_grid(p, ls, ds);
        for (std::size_t i = 0; i < ls.size(); ++i) {
            for (std::size_t j = 0; j < ds.size(); ++j) {
                if (i > 0) {
                    EXPECT_LE(g.p[i][j], g.p[i - 1][j] * (1 + 1e-12));
                }
                if (j > 0) {
                    EXPECT_LE(g.p[i][j], g.p[i][j - 1] * (1 + 1e-12));
                }
                // Safe cells form a down-set: safe here implies safe toward the origin.
                if (g.safe[i][j]) {
                    EXPECT_TRUE(i == 0 || g.safe[i - 1][j]);
                    EXPECT_TRUE(j == 0 || g.safe[i][j - 1]);
                }
            }
        }
    }
}

TEST(ToleranceGrid, AxisValidation)
{
    const auto p = profile(1.0, 1.0, 100, 1.0, 1.0);
    const std::vector<double> bad_l{0.1, 0.05}, ok{0.0, 0.1}, one{1.0};
    EXPECT_THROW(tolerance_grid(p, bad_l, ok), Error);
    EXPECT_THROW(tolerance_grid(p, one, ok), Error);
    EXPECT_THROW(tolerance_grid(p, ok, bad_l), Error);
    EXPECT_THROW(tolerance_grid(p, ok, ok, 1.0), Error);
    EXPECT_EQ(default_loss_axis().size(), 21u);
    EXPECT_DOUBLE_EQ(default_loss_axis().back(), 0.2);
    EXPECT_DOUBLE_EQ(default_delta2_axis(10.0, 100.0).back(), 3.0);
    EXPECT_DOUBLE_EQ(default_delta2_axis(100.0, 10.0).back(), 5.0);
}

TEST(ToleranceGrid, DegenerateCellsAreNotedNotFatal)
{
    const auto p = profile(1.0, 0.0, 100, 1.0, 0.0);
    const std::vector<double> l{0.0, 0.1}, d{0.0, 0.5};
    const auto g = tolerance_grid(p, l, d);
    EXPECT_FALSE(g.safe[0][0]);
    EXPECT_TRUE(std::isnan(g.p[0][0]));
    EXPECT_FALSE(g.notes.empty());
    // l = 0.1, delta'' = 0.5 mixes two values in the treatment arm, so it has variance.
    EXPECT_FALSE(std::isnan(g.p[1][1]));
}

TEST(DefaultLostScenario, UniformSampleAgainstSortSliceOracle)
{
    std::mt19937_64 rng(59);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(10'000);
    for (auto& x : v) x = u(rng);
    const auto s = default_lost_scenario(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const std::vector<double> tail(sorted.begin(), sorted.begin() + 1000);
    const auto o = direct(tail);
    EXPECT_NEAR(s.lost_mean_ctrl, o.mean, 1e-12);
    EXPECT_NEAR(s.lost_sd_ctrl, std::sqrt(o.var), 1e-12);
    EXPECT_NEAR(s.lost_mean_ctrl, 0.05, 0.005);
    EXPECT_NEAR(s.lost_sd_ctrl, 0.1 / std::sqrt(12.0), 0.003);

    const auto up = default_lost_scenario(v, Tail::upper);
    const std::vector<double> top(sorted.end() - 1000, sorted.end());
    EXPECT_NEAR(up.lost_mean_ctrl, direct(top).mean, 1e-12);
}

TEST(DefaultLostScenario, ConstantAndTooSmall)
{
    const std::vector<double> c(500, 7.0);
    const auto s = default_lost_scenario(c);
    EXPECT_EQ(s.lost_mean_ctrl, 7.0);
    EXPECT_EQ(s.lost_sd_ctrl, 0.0);
    const std::vector<double> small(50, 1.0);
    try {
        default_lost_scenario(small);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::insufficient_data);
    }
}
