#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mvloss/spde.hpp"
#include "oracles.hpp"

using namespace mvloss;

namespace {

// Unit point mass at x0 on a grid of spacing dx.
DensityGrid point_mass(double x0, double x_max, double dx) {
    auto v = DensityGrid::zeros(x_max, static_cast<std::size_t>(std::lround(x_max / dx)));
    v.values[static_cast<std::size_t>(std::lround(x0 / dx))] = 1.0 / dx;
    return v;
}

double first_moment(const DensityGrid& v) {
    DensityGrid xv = v;
    for (std::size_t j = 0; j <= v.m; ++j) {
        xv.values[j] *= v.x(j);
    }
    return total_mass(xv);
}

}  // namespace

TEST(Discretize, UnitMassAndZeroBoundary) {
    const auto v = discretize(InitialDensity::step({0.25, 1.25}, {1.0}), 10.0, 200);
    EXPECT_EQ(v.values[0], 0.0);
    EXPECT_NEAR(total_mass(v), 1.0, 1e-14);
    EXPECT_NEAR(mass_between(v, 0.25, 1.25), 1.0, 0.03);
}

TEST(KernelStep, SurvivalFromPointMass) {
    const auto v = point_mass(1.0, 12.0, 0.005);
    const auto c = constant_coefficients(0.0, 1.0, 0.0);
    const auto out = step_kernel(v, c, 0.0, 1.0, 0.0, 0.0);
    EXPECT_NEAR(total_mass(out), 2.0 * oracle::phi(1.0) - 1.0, 1e-5);
    for (double x : {0.3, 1.0, 2.5}) {
        const auto j = static_cast<std::size_t>(std::lround(x / out.dx()));
        EXPECT_NEAR(out.values[j], oracle::killed_density(1.0, x, 0.0, 1.0), 1e-6);
    }
}

TEST(KernelStep, SystemicTransportAndDrift) {
    // b = mu delta + sigma rho dw, s = sigma^2 (1 - rho^2) delta
    const auto v = point_mass(1.5, 12.0, 0.005);
    const auto c = constant_coefficients(0.3, 0.8, 0.6);
    const double delta = 0.5, dw = -0.7;
    const double b = 0.3 * delta + 0.8 * 0.6 * dw;
    const double s = 0.64 * (1.0 - 0.36) * delta;
    const auto out = step_kernel(v, c, 0.0, delta, dw, 0.0);
    EXPECT_NEAR(total_mass(out), oracle::survival(1.5, b, s), 1e-5);
}

TEST(KernelStep, FirstMomentShiftsByTransport) {
    // far from the boundary the killing is negligible
    const auto v = point_mass(6.0, 12.0, 0.005);
    const auto c = constant_coefficients(0.2, 1.0, 0.5);
    const double delta = 0.01, dw = 0.15;
    const auto out = step_kernel(v, c, 0.0, delta, dw, 0.0);
    EXPECT_NEAR(first_moment(out) - 6.0, 0.2 * delta + 0.5 * dw, 1e-9);
}

TEST(KernelStep, ZeroStaysZero) {
    const auto v = DensityGrid::zeros(5.0, 100);
    const auto c = constant_coefficients(0.1, 1.0, 0.5);
    for (double x : step_kernel(v, c, 0.0, 0.1, 0.3, 0.0).values) {
        EXPECT_EQ(x, 0.0);
    }
    for (double x : step_fd(v, c, 0.0, 0.1, 0.3, 0.0).values) {
        EXPECT_EQ(x, 0.0);
    }
}

TEST(FdStep, MatchesKilledTransitionForSmoothData) {
    const auto nu0 = InitialDensity::truncated_gaussian(1.5, 0.3);
    const auto v = discretize(nu0, 10.0, 2000);
    const auto c = constant_coefficients(0.1, 1.0, 0.5);
    const double delta = 0.05, dw = 0.2;
    const double b = 0.1 * delta + 0.5 * dw;
    const double s = 0.75 * delta;
    const double expected = oracle::gauss_kronrod(
        [&](double x0) { return nu0.pdf(x0) * oracle::survival(x0, b, s); }, 0.0, 5.0);
    FdStepStats stats;
    const auto out = step_fd(v, c, 0.0, delta, dw, 0.0, true, &stats);
    EXPECT_NEAR(total_mass(out), expected, 2e-4);
    EXPECT_GE(stats.substeps, 1u);
    EXPECT_LE(stats.max_cfl, 0.9 + 1e-12);
    for (double x : out.values) {
        EXPECT_GE(x, 0.0);
    }
}

TEST(Solver, KernelNeedsSpaceHomogeneousCoefficients) {
    auto c = constant_coefficients(0.0, 1.0, 0.0);
    c.sigma = [](double, double x) { return 1.0 + 0.1 * x; };
    c.space_homogeneous = false;
    SolverConfig cfg;
    cfg.grid = TimeGrid(1.0, 10);
    EXPECT_THROW(SpdeSolver(cfg, c, InitialDensity::truncated_gaussian(1.0, 0.1)), ConfigError);
    cfg.backend = Backend::fd;
    cfg.dx = 0.05;
    EXPECT_NO_THROW(SpdeSolver(cfg, c, InitialDensity::truncated_gaussian(1.0, 0.1)));
}

TEST(Solver, ConstantCoefficientLossMatchesReflection) {
    SolverConfig cfg;
    cfg.grid = TimeGrid(1.0, 100);
    const auto nu0 = InitialDensity::truncated_gaussian(1.0, 0.01);
    const auto c = constant_coefficients(0.0, 1.0, 0.0);
    const auto r = solve(cfg, c, nu0, sample(cfg.grid, 1, 0));
    // with rho = 0 each kernel step is the exact killed transition
    EXPECT_NEAR(r.loss.terminal(), 2.0 * oracle::phi(-1.0), 2e-4);
    cfg.backend = Backend::fd;
    EXPECT_NEAR(solve(cfg, c, nu0, sample(cfg.grid, 1, 0)).loss.terminal(), 2.0 * oracle::phi(-1.0), 1e-3);
}

TEST(Solver, NoCommonNoiseMeansNoPathDependence) {
    SolverConfig cfg;
    cfg.grid = TimeGrid(0.5, 50);
    cfg.dx = 0.01;
    const auto nu0 = InitialDensity::truncated_gaussian(1.0, 0.3);
    const auto c = constant_coefficients(-0.2, 1.0, 0.0);
    const SpdeSolver solver(cfg, c, nu0);
    EXPECT_EQ(solver.solve(sample(cfg.grid, 1, 0)).loss.values, solver.solve(sample(cfg.grid, 2, 0)).loss.values);
}

TEST(Solver, LossMonotoneAndMassAccounted) {
    SolverConfig cfg;
    cfg.backend = Backend::fd;
    cfg.grid = TimeGrid(4.0, 200);
    cfg.dx = 0.05;
    cfg.snapshot_stride = 20;
    const auto c = constant_coefficients(0.0, 1.0, figure2_rho());
    const auto r = solve(cfg, c, InitialDensity::step({0.25, 1.25}, {1.0}), sample(cfg.grid, 7, 0));
    EXPECT_EQ(r.loss.monotonicity_violations(), 0u);
    EXPECT_LE(r.max_loss_dip, cfg.mass_tolerance);
    ASSERT_EQ(r.snapshots.size(), 11u);
    for (const auto& s : r.snapshots) {
        const double l = r.loss.at(s.time);
        EXPECT_NEAR(total_mass(s) + l, 1.0, cfg.mass_tolerance + 1e-12);
        EXPECT_EQ(s.values[0], 0.0);
    }
}

TEST(Solver, RequestedSnapshotsComeFirstInOrder) {
    SolverConfig cfg;
    cfg.grid = TimeGrid(1.0, 10);
    cfg.dx = 0.02;
    cfg.snapshot_stride = 5;
    const std::vector<double> times{0.7, 0.2};
    const auto r = solve(cfg, constant_coefficients(0.0, 1.0, 0.2), InitialDensity::truncated_gaussian(1.0, 0.3),
                         sample(cfg.grid, 1, 0), times);
    ASSERT_EQ(r.snapshots.size(), 5u);
    EXPECT_NEAR(r.snapshots[0].time, 0.7, 1e-12);
    EXPECT_NEAR(r.snapshots[1].time, 0.2, 1e-12);
    EXPECT_NEAR(r.snapshots[2].time, 0.0, 1e-12);
    EXPECT_NEAR(r.snapshots[4].time, 1.0, 1e-12);
}

TEST(Solver, TimeRefinementReducesMeanError) {
    const auto nu0 = InitialDensity::truncated_gaussian(1.0, 0.3);
    const auto c = constant_coefficients(0.0, 1.0, 0.9);
    SolverConfig cfg;
    cfg.dx = 0.02;
    double e_coarse = 0.0, e_mid = 0.0;
    for (std::uint64_t r = 0; r < 20; ++r) {
        const auto w = sample(TimeGrid(0.5, 8), derive_seed(11, r), 0);
        const auto w_mid = refine(w, 4);
        const auto w_fine = refine(w_mid, 16);
        auto terminal = [&](const BrownianPath& p) {
            SolverConfig k = cfg;
            k.grid = p.grid;
            return solve(k, c, nu0, p).loss.terminal();
        };
        const double ref = terminal(w_fine);
        e_coarse += std::fabs(terminal(w) - ref);
        e_mid += std::fabs(terminal(w_mid) - ref);
    }
    EXPECT_LT(e_mid, e_coarse);
}

TEST(Heatmap, RoundTripAndLayout) {
    SolverConfig cfg;
    cfg.grid = TimeGrid(1.0, 20);
    cfg.dx = 0.05;
    cfg.snapshot_stride = 2;
    const auto r = solve(cfg, constant_coefficients(0.0, 1.0, 0.5), InitialDensity::truncated_gaussian(1.0, 0.3),
                         sample(cfg.grid, 3, 0));
    std::stringstream ss;
    write_heatmap(ss, r.snapshots);
    std::string header;
    std::getline(ss, header);
    EXPECT_EQ(header.rfind("0 1 0 ", 0), 0u) << header;
    ss.seekg(0);
    const auto back = read_heatmap(ss);
    ASSERT_EQ(back.size(), r.snapshots.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_NEAR(back[i].time, r.snapshots[i].time, 1e-12);
        EXPECT_EQ(back[i].values[0], 0.0);
        for (std::size_t j = 0; j <= back[i].m; ++j) {
            EXPECT_NEAR(back[i].values[j], r.snapshots[i].values[j], 1e-11 * (1.0 + r.snapshots[i].values[j]));
        }
    }
    std::stringstream bad("0 1 0 5 3");
    EXPECT_THROW(read_heatmap(bad), ConfigError);
}
