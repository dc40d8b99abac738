#pragma once

// Empirical checks on recorded runs: loss regularity, boundary and tail
// decay of the density, particle-to-SPDE convergence, loss increments and
// the weak form of the limit equation. Everything here reads stored
// artifacts only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mvloss/brownian.hpp"
#include "mvloss/coefficients.hpp"
#include "mvloss/errors.hpp"
#include "mvloss/loss_path.hpp"
#include "mvloss/numerics.hpp"
#include "mvloss/parallel.hpp"
#include "mvloss/particles.hpp"
#include "mvloss/rng.hpp"
#include "mvloss/spde.hpp"

namespace mvloss {

struct DiagnosticRow {
    std::string check;
    double statistic = 0.0;
    double threshold = 0.0;
    bool passed = false;
};

inline void write_report_csv(std::ostream& os, std::span<const DiagnosticRow> rows) {
    os << "check,statistic,threshold,pass\n";
    char buf[64];
    for (const auto& r : rows) {
        os << r.check << ',';
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,", r.statistic, r.threshold);
        os << buf << (r.passed ? "PASS" : "FAIL") << '\n';
    }
}

inline void write_report_text(std::ostream& os, std::span<const DiagnosticRow> rows) {
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-28s %-4s  statistic=%.6g  threshold=%.6g\n", r.check.c_str(),
                      r.passed ? "PASS" : "FAIL", r.statistic, r.threshold);
        os << buf;
    }
}

// ---------------------------------------------------------------------------

/// Least-squares fit of log(ordinate) on log(abscissa), using only points
/// with positive ordinates.
struct DecayFit {
    std::vector<double> abscissae;
    std::vector<double> ordinates;
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t points_used = 0;
};

inline DecayFit fit_decay(std::vector<double> x, std::vector<double> y) {
    if (x.size() != y.size()) {
        throw DomainError("fit_decay: abscissae and ordinates differ in length");
    }
    DecayFit fit;
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (y[i] > 0.0 && x[i] > 0.0) {
            lx.push_back(std::log(x[i]));
            ly.push_back(std::log(y[i]));
        }
    }
    fit.abscissae = std::move(x);
    fit.ordinates = std::move(y);
    fit.points_used = lx.size();
    if (lx.size() >= 2) {
        const LinearFit lf = least_squares(lx, ly);
        fit.slope = lf.slope;
        fit.intercept = lf.intercept;
        fit.r2 = lf.r_squared;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Regularity of a solved run

struct RegularityOptions {
    /// Boundary windows eps = factor * sqrt(T) * sigma_typ.
    std::vector<double> eps_factors{0.4, 0.2, 0.1, 0.05, 0.025};
    double sigma_typ = 1.0;
    double min_boundary_slope = 1.0;
    double min_boundary_r2 = 0.95;
    /// Mass allowed in the outermost 5% of the spatial domain.
    double leakage_tolerance = 1e-8;
    double monotone_tolerance = 0.0;
};

struct RegularityReport {
    std::vector<DiagnosticRow> rows;
    DecayFit boundary;
    DecayFit tail;
    bool passed() const {
        return std::all_of(rows.begin(), rows.end(), [](const DiagnosticRow& r) { return r.passed; });
    }
    const DiagnosticRow& at(const std::string& name) const {
        for (const auto& r : rows) {
            if (r.check == name) {
                return r;
            }
        }
        throw DomainError("no diagnostic named '" + name + "'");
    }
};

/// Time integral (trapezoid over snapshot times) of the mass on (0, eps).
inline double integrated_boundary_mass(std::span<const DensityGrid> snaps, double eps) {
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < snaps.size(); ++k) {
        const double dt = snaps[k + 1].time - snaps[k].time;
        s += 0.5 * dt * (mass_between(snaps[k], 0.0, eps) + mass_between(snaps[k + 1], 0.0, eps));
    }
    return s;
}

inline double mass_beyond(const DensityGrid& v, double lambda) { return mass_between(v, lambda, v.x_max); }

/// Checks the loss is nondecreasing, fits the boundary mass decay over the
/// eps grid, and checks that the density has negligible mass near x_max
/// with faster-than-exponential tail decay. Snapshots must be time-ordered
/// and dense enough to integrate over time.
inline RegularityReport check_regularity(const LossPath& loss, std::span<const DensityGrid> snaps,
                                         const RegularityOptions& opt = {}) {
    RegularityReport rep;
    const auto violations = loss.monotonicity_violations(opt.monotone_tolerance);
    rep.rows.push_back({"loss_monotone", static_cast<double>(violations), 0.0, violations == 0});
    if (snaps.size() < 2) {
        return rep;
    }

    const double scale = std::sqrt(loss.grid.horizon()) * opt.sigma_typ;
    std::vector<double> eps, mass;
    for (double f : opt.eps_factors) {
        eps.push_back(f * scale);
        mass.push_back(integrated_boundary_mass(snaps, f * scale));
    }
    rep.boundary = fit_decay(eps, mass);
    rep.rows.push_back({"boundary_decay_slope", rep.boundary.slope, opt.min_boundary_slope,
                        rep.boundary.points_used >= 2 && rep.boundary.slope >= opt.min_boundary_slope});
    rep.rows.push_back({"boundary_decay_r2", rep.boundary.r2, opt.min_boundary_r2, rep.boundary.r2 >= opt.min_boundary_r2});

    double leakage = 0.0;
    for (const auto& s : snaps) {
        leakage = std::max(leakage, mass_beyond(s, 0.95 * s.x_max));
    }
    rep.rows.push_back({"tail_leakage", leakage, opt.leakage_tolerance, leakage <= opt.leakage_tolerance});

    // Tail shape on the last snapshot: -log(tail mass) against the distance
    // past the median should grow faster than linearly (log-log slope > 1).
    const DensityGrid& last = snaps.back();
    const double alive = total_mass(last);
    if (alive > 0.0) {
        double median = 0.0, q99 = last.x_max;
        double acc = 0.0;
        bool have_median = false;
        for (std::size_t j = 0; j < last.m; ++j) {
            acc += 0.5 * (last.values[j] + last.values[j + 1]) * last.dx();
            if (!have_median && acc >= 0.5 * alive) {
                median = last.x(j + 1);
                have_median = true;
            }
            if (acc >= 0.99 * alive) {
                q99 = last.x(j + 1);
                break;
            }
        }
        std::vector<double> dist, rate;
        for (int k = 1; k <= 6; ++k) {
            const double lambda = q99 + (0.9 * last.x_max - q99) * k / 6.0;
            const double tail = mass_beyond(last, lambda) / alive;
            if (tail > 1e-14 && tail < 1.0 && lambda > median) {
                dist.push_back(lambda - median);
                rate.push_back(-std::log(tail));
            }
        }
        rep.tail = fit_decay(dist, rate);
        rep.rows.push_back({"tail_superlinear_decay", rep.tail.slope, 1.0, rep.tail.points_used >= 2 && rep.tail.slope > 1.0});
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Particle to SPDE convergence

/// Time-averaged |a - b| over shared grid nodes (trapezoid in time).
inline double loss_distance(const LossPath& a, const LossPath& b) {
    if (!(a.grid == b.grid)) {
        throw DomainError("loss_distance: loss paths are on different grids");
    }
    const auto& x = a.values;
    const auto& y = b.values;
    double s = 0.0;
    for (std::size_t k = 0; k + 1 < x.size(); ++k) {
        s += 0.5 * (std::fabs(x[k] - y[k]) + std::fabs(x[k + 1] - y[k + 1]));
    }
    return s / static_cast<double>(x.size() - 1);
}

struct ConvergenceReport {
    std::vector<std::size_t> n_values;
    /// distances[i] = mean over seeds of per_seed[i][s]
    std::vector<double> distances;
    std::vector<std::vector<double>> per_seed;
    DecayFit fit;
    LossPath spde_loss;

    /// Seeds s with per_seed[0][s] > per_seed[1][s] > ... strictly.
    std::size_t strictly_decreasing_count() const {
        std::size_t count = 0;
        const std::size_t seeds = per_seed.empty() ? 0 : per_seed.front().size();
        for (std::size_t s = 0; s < seeds; ++s) {
            bool ok = true;
            for (std::size_t i = 0; i + 1 < per_seed.size(); ++i) {
                ok = ok && per_seed[i][s] > per_seed[i + 1][s];
            }
            count += ok ? 1 : 0;
        }
        return count;
    }
};

/// For each N, runs the particle system along the shared systemic path with
/// idiosyncratic seeds derive_seed(seed, s), s < seeds_per_n, and compares
/// each loss path with the SPDE loss along the same path.
inline ConvergenceReport convergence_study(std::span<const std::size_t> n_list, const BrownianPath& systemic,
                                           const CoefficientSet& c, const InitialDensity& nu0,
                                           const SolverConfig& cfg, std::size_t seeds_per_n, std::uint64_t seed,
                                           unsigned threads = 1, const ParticleOptions& popt = {}) {
    if (n_list.size() < 3) {
        throw DomainError("convergence_study: need at least three particle counts");
    }
    for (std::size_t i = 0; i + 1 < n_list.size(); ++i) {
        if (n_list[i] >= n_list[i + 1]) {
            throw DomainError("convergence_study: particle counts must increase");
        }
    }
    if (seeds_per_n == 0) {
        throw DomainError("convergence_study: need at least one seed");
    }
    SolverConfig solver_cfg = cfg;
    solver_cfg.grid = systemic.grid;
    ConvergenceReport rep{{n_list.begin(), n_list.end()}, {}, {}, {}, SpdeSolver(solver_cfg, c, nu0).solve(systemic).loss};

    rep.per_seed.assign(n_list.size(), std::vector<double>(seeds_per_n, 0.0));
    const std::size_t jobs = n_list.size() * seeds_per_n;
    parallel_for(jobs, threads, [&](std::size_t job) {
        const std::size_t i = job / seeds_per_n;
        const std::size_t s = job % seeds_per_n;
        const ParticleRun run = simulate(nu0, c, n_list[i], systemic, derive_seed(seed, s), {}, popt);
        rep.per_seed[i][s] = loss_distance(run.loss, rep.spde_loss);
    });
    std::vector<double> ns;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
        double mean = 0.0;
        for (double d : rep.per_seed[i]) {
            mean += d;
        }
        rep.distances.push_back(mean / static_cast<double>(seeds_per_n));
        ns.push_back(static_cast<double>(n_list[i]));
    }
    rep.fit = fit_decay(ns, rep.distances);
    return rep;
}

inline void write_convergence_csv(std::ostream& os, const ConvergenceReport& rep) {
    os << "n,mean_distance,min_distance,max_distance\n";
    char buf[128];
    for (std::size_t i = 0; i < rep.n_values.size(); ++i) {
        const auto [lo, hi] = std::minmax_element(rep.per_seed[i].begin(), rep.per_seed[i].end());
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", rep.n_values[i], rep.distances[i], *lo, *hi);
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// Loss increments

struct IncrementScan {
    double t = 0.0;
    double h = 0.0;
    double r = 0.0;
    std::vector<double> levels;
    /// frequency of {L_{t+h} - L_t < level} and {L_t < r} across runs
    std::vector<double> frequencies;
    /// frequency of {L_t < r}
    double below_r = 0.0;
    std::size_t runs = 0;

    /// The event grows with the level, so frequencies can only go up.
    bool nondecreasing() const {
        for (std::size_t i = 0; i + 1 < frequencies.size(); ++i) {
            if (levels[i] <= levels[i + 1] && frequencies[i] > frequencies[i + 1]) {
                return false;
            }
        }
        return true;
    }
};

inline IncrementScan loss_increment_scan(std::span<const LossPath> runs, double t, double h, double r,
                                         std::vector<double> levels) {
    if (!(h > 0.0)) {
        throw DomainError("loss_increment_scan: h must be positive");
    }
    if (runs.empty()) {
        throw DomainError("loss_increment_scan: no runs");
    }
    IncrementScan scan{t, h, r, std::move(levels), {}, 0.0, runs.size()};
    scan.frequencies.assign(scan.levels.size(), 0.0);
    std::size_t below = 0;
    for (const auto& path : runs) {
        const double lt = path.at(t);
        if (!(lt < r)) {
            continue;
        }
        ++below;
        const double inc = path.at(t + h) - lt;
        for (std::size_t i = 0; i < scan.levels.size(); ++i) {
            if (inc < scan.levels[i]) {
                scan.frequencies[i] += 1.0;
            }
        }
    }
    const auto n = static_cast<double>(runs.size());
    for (double& f : scan.frequencies) {
        f /= n;
    }
    scan.below_r = static_cast<double>(below) / n;
    return scan;
}

// ---------------------------------------------------------------------------
// Weak form of the limit equation

/// max over snapshot times t_k of
///   | nu_k(phi) - nu_0(phi) - sum_{j<k} [ nu_j(mu phi' + sigma^2 phi''/2) delta
///                                        + nu_j(sigma rho phi') dw_j ] |
/// with nu_j(f) the trapezoid pairing of f against the density and the loss
/// argument taken from `loss` at t_j. Snapshots must be the states at every
/// grid node 0..n_steps of w's grid.
inline double weak_form_residual(std::span<const DensityGrid> snaps, const LossPath& loss, const CoefficientSet& c,
                                 const BrownianPath& w, const TestFunction& phi) {
    require_vanishing_at_origin(phi);
    const TimeGrid& grid = w.grid;
    if (snaps.size() != grid.n_steps() + 1 || !(loss.grid == grid)) {
        throw DomainError("weak_form_residual: need one snapshot per grid node of the path");
    }
    const double initial = pair_with(snaps[0], phi.f);
    double accumulated = 0.0;
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        const double t = grid.time(k);
        const double ell = loss.values[k];
        const double rho = c.rho(t, ell);
        const double generator = pair_with(snaps[k], [&](double x) {
            const double s = c.sigma(t, x);
            return c.mu(t, x, ell) * phi.df(x) + 0.5 * s * s * phi.d2f(x);
        });
        double transport = 0.0;
        if (rho != 0.0) {
            transport = pair_with(snaps[k], [&](double x) { return c.sigma(t, x) * rho * phi.df(x); });
        }
        accumulated += generator * grid.delta() + transport * w.increments[k];
        worst = std::max(worst, std::fabs(pair_with(snaps[k + 1], phi.f) - initial - accumulated));
    }
    return worst;
}

}  // namespace mvloss
