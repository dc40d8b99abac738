#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mvloss/diagnostics.hpp"
#include "oracles.hpp"

using namespace mvloss;

namespace {

SolveResult constant_run(std::size_t stride, double rho = 0.0, std::size_t steps = 200) {
    SolverConfig cfg;
    cfg.grid = TimeGrid(1.0, steps);
    cfg.dx = 0.01;
    cfg.snapshot_stride = stride;
    return solve(cfg, constant_coefficients(0.0, 1.0, rho), InitialDensity::truncated_gaussian(1.0, 0.01),
                 sample(cfg.grid, 1, 0));
}

LossPath ramp(double slope, std::size_t n = 10) {
    LossPath p(TimeGrid(1.0, n));
    for (std::size_t k = 0; k <= n; ++k) {
        p.values[k] = slope * p.grid.time(k);
    }
    return p;
}

}  // namespace

TEST(FitDecay, PowerLawAndScaleInvariance) {
    const std::vector<double> x{0.5, 1.0, 2.0, 4.0};
    std::vector<double> y, y_scaled;
    for (double v : x) {
        y.push_back(3.0 * v * v);
        y_scaled.push_back(7.0 * 3.0 * v * v);
    }
    const auto a = fit_decay(x, y);
    const auto b = fit_decay(x, y_scaled);
    EXPECT_NEAR(a.slope, 2.0, 1e-12);
    EXPECT_NEAR(a.r2, 1.0, 1e-12);
    EXPECT_NEAR(b.slope, a.slope, 1e-12);
    EXPECT_NEAR(b.intercept - a.intercept, std::log(7.0), 1e-12);
    const auto c = fit_decay({1.0, 2.0, 3.0, 4.0}, {0.0, 1.0, -1.0, 4.0});
    EXPECT_EQ(c.points_used, 2u);
}

TEST(Regularity, ConstantCoefficientRunPasses) {
    const auto r = constant_run(2);
    const auto rep = check_regularity(r.loss, r.snapshots);
    EXPECT_TRUE(rep.passed()) << rep.at("boundary_decay_slope").statistic;
    // the density vanishes linearly at zero, so the boundary mass is ~ eps^2
    EXPECT_GE(rep.at("boundary_decay_slope").statistic, 1.0);
    EXPECT_GE(rep.boundary.r2, 0.95);
    EXPECT_LE(rep.at("tail_leakage").statistic, 1e-8);
    EXPECT_THROW(rep.at("nonexistent"), DomainError);
}

TEST(Regularity, TailMassMatchesKilledTransition) {
    SolverConfig cfg;
    cfg.grid = TimeGrid(1.0, 200);
    cfg.dx = 0.01;
    cfg.snapshot_stride = 200;
    const auto last = solve(cfg, constant_coefficients(0.0, 1.0, 0.0), InitialDensity::truncated_gaussian(1.0, 0.01),
                            sample(cfg.grid, 1, 0))
                          .snapshots.back();
    const double lambda = 0.5 * last.x_max;
    const auto nu0 = InitialDensity::truncated_gaussian(1.0, 0.01);
    const double expected = oracle::gauss_kronrod(
        [&](double x0) {
            return nu0.pdf(x0) *
                   oracle::gauss_kronrod([&](double x) { return oracle::killed_density(x0, x, 0.0, 1.0); }, lambda,
                                         lambda + 15.0, 1e-12);
        },
        0.9, 1.1, 1e-10);
    EXPECT_NEAR(mass_beyond(last, lambda) / expected, 1.0, 1e-3) << expected;
}

TEST(Regularity, RerunIsBitIdentical) {
    const auto a = constant_run(4, 0.5, 100);
    const auto b = constant_run(4, 0.5, 100);
    const auto ra = check_regularity(a.loss, a.snapshots);
    const auto rb = check_regularity(b.loss, b.snapshots);
    std::ostringstream sa, sb;
    write_report_csv(sa, ra.rows);
    write_report_csv(sb, rb.rows);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(sa.str().rfind("check,statistic,threshold,pass\n", 0), 0u);
    EXPECT_NE(sa.str().find("PASS"), std::string::npos);
}

TEST(Regularity, DecreasingLossFlagged) {
    auto p = ramp(0.5);
    p.values[5] = 0.1;
    const auto rep = check_regularity(p, std::span<const DensityGrid>{});
    EXPECT_FALSE(rep.passed());
    EXPECT_EQ(rep.at("loss_monotone").statistic, 1.0);
}

TEST(LossDistance, TimeAveragedAbsoluteGap) {
    EXPECT_EQ(loss_distance(ramp(0.3), ramp(0.3)), 0.0);
    // |0.5 t - 0.3 t| averaged over [0, 1] = 0.1, exact for the trapezoid rule
    EXPECT_NEAR(loss_distance(ramp(0.5), ramp(0.3)), 0.1, 1e-15);
}

TEST(Convergence, ArgumentChecksAndStructure) {
    const auto w = sample(TimeGrid(0.5, 25), 1, 0);
    const auto c = constant_coefficients(0.0, 1.0, 0.5);
    const auto nu0 = InitialDensity::truncated_gaussian(1.0, 0.3);
    SolverConfig cfg;
    cfg.dx = 0.02;
    const std::vector<std::size_t> two{100, 200}, unsorted{100, 400, 200}, good{50, 200, 800};
    EXPECT_THROW(convergence_study(two, w, c, nu0, cfg, 2, 1), DomainError);
    EXPECT_THROW(convergence_study(unsorted, w, c, nu0, cfg, 2, 1), DomainError);
    const auto rep = convergence_study(good, w, c, nu0, cfg, 4, 1, 2);
    ASSERT_EQ(rep.distances.size(), 3u);
    ASSERT_EQ(rep.per_seed.size(), 3u);
    EXPECT_GT(rep.distances[0], rep.distances[2]);
    std::ostringstream os;
    write_convergence_csv(os, rep);
    const std::string csv = os.str();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

    const ConvergenceReport manual{
        {}, {}, {{3.0, 3.0, 5.0}, {2.0, 1.0, 4.0}, {1.0, 2.0, 3.0}}, {}, LossPath(TimeGrid(1.0, 1))};
    EXPECT_EQ(manual.strictly_decreasing_count(), 2u);
}

TEST(IncrementScan, LevelEdgeCases) {
    std::vector<LossPath> runs{ramp(0.1), ramp(0.4), ramp(0.8)};
    const auto scan = loss_increment_scan(runs, 0.5, 0.2, 0.3, {0.0, 0.05, 0.1, 1.0});
    // L_0.5 = 0.05, 0.2, 0.4; only the first two are below r = 0.3
    EXPECT_NEAR(scan.below_r, 2.0 / 3.0, 1e-15);
    EXPECT_EQ(scan.frequencies[0], 0.0);  // a nondecreasing loss never has a negative increment
    EXPECT_NEAR(scan.frequencies[1], 1.0 / 3.0, 1e-15);  // increment 0.02 only
    EXPECT_NEAR(scan.frequencies[3], scan.below_r, 1e-15);
    EXPECT_TRUE(scan.nondecreasing());
    EXPECT_THROW(loss_increment_scan(runs, 0.5, 0.0, 0.3, {0.1}), DomainError);
}

TEST(WeakForm, ResidualShrinksWithTimeStep) {
    const auto c = constant_coefficients(0.2, 1.0, 0.0);
    const auto nu0 = InitialDensity::truncated_gaussian(1.5, 0.3);
    const auto phi = gaussian_test_function(1.0);
    auto residual = [&](std::size_t steps) {
        SolverConfig cfg;
        cfg.grid = TimeGrid(0.5, steps);
        cfg.dx = 0.005;
        cfg.snapshot_stride = 1;
        const auto w = sample(cfg.grid, 1, 0);
        const auto r = solve(cfg, c, nu0, w);
        return weak_form_residual(r.snapshots, r.loss, c, w, phi);
    };
    const double coarse = residual(25), fine = residual(50);
    EXPECT_GE(coarse / fine, 1.5) << coarse << " " << fine;
}

TEST(WeakForm, ZeroTestFunctionAndShapeChecks) {
    const auto c = constant_coefficients(0.0, 1.0, 0.5);
    SolverConfig cfg;
    cfg.grid = TimeGrid(0.5, 10);
    cfg.dx = 0.02;
    cfg.snapshot_stride = 1;
    const auto w = sample(cfg.grid, 1, 0);
    const auto r = solve(cfg, c, InitialDensity::truncated_gaussian(1.0, 0.3), w);
    EXPECT_EQ(weak_form_residual(r.snapshots, r.loss, c, w, zero_test_function()), 0.0);
    const std::span<const DensityGrid> short_span(r.snapshots.data(), 5);
    EXPECT_THROW(weak_form_residual(short_span, r.loss, c, w, gaussian_test_function()), DomainError);
}
