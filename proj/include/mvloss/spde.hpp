#pragma once

// Time stepping for the limit SPDE along a given systemic Brownian path.
// Each step freezes the loss at its value from the previous step, advances
// the density by a linear advection-diffusion step with the systemic
// increment acting as transport, and recomputes the loss by quadrature.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mvloss/brownian.hpp"
#include "mvloss/coefficients.hpp"
#include "mvloss/errors.hpp"
#include "mvloss/initial_density.hpp"
#include "mvloss/loss_path.hpp"
#include "mvloss/numerics.hpp"

namespace mvloss {

/// Density values V_j at x_j = j * dx, j = 0..m, with V_0 = 0.
struct DensityGrid {
    double x_max = 0.0;
    std::size_t m = 0;
    std::vector<double> values;
    double time = 0.0;

    double dx() const noexcept { return x_max / static_cast<double>(m); }
    double x(std::size_t j) const noexcept { return static_cast<double>(j) * dx(); }

    static DensityGrid zeros(double x_max, std::size_t m, double time = 0.0) {
        if (m < 2 || !(x_max > 0.0)) {
            throw DomainError("DensityGrid: need x_max > 0 and m >= 2");
        }
        return {x_max, m, std::vector<double>(m + 1, 0.0), time};
    }
};

/// Trapezoid mass on [0, x_max].
inline double total_mass(const DensityGrid& v) {
    double s = 0.0;
    for (std::size_t j = 1; j < v.m; ++j) {
        s += v.values[j];
    }
    s += 0.5 * (v.values[0] + v.values[v.m]);
    return s * v.dx();
}

inline double loss(const DensityGrid& v) { return 1.0 - total_mass(v); }

/// Mass on (a, b), trapezoid with linear interpolation at the ends.
inline double mass_between(const DensityGrid& v, double a, double b) {
    a = std::max(a, 0.0);
    b = std::min(b, v.x_max);
    if (!(b > a)) {
        return 0.0;
    }
    const double dx = v.dx();
    auto value_at = [&](double x) {
        const auto j = std::min(static_cast<std::size_t>(x / dx), v.m - 1);
        const double w = x / dx - static_cast<double>(j);
        return (1.0 - w) * v.values[j] + w * v.values[j + 1];
    };
    const auto first = static_cast<std::size_t>(std::ceil(a / dx));
    const auto last = std::min(static_cast<std::size_t>(std::floor(b / dx)), v.m);
    if (first > last) {
        return 0.5 * (value_at(a) + value_at(b)) * (b - a);
    }
    double s = 0.5 * (value_at(a) + v.values[first]) * (v.x(first) - a);
    for (std::size_t j = first; j < last; ++j) {
        s += 0.5 * (v.values[j] + v.values[j + 1]) * dx;
    }
    s += 0.5 * (v.values[last] + value_at(b)) * (b - v.x(last));
    return s;
}

/// Integral of f(x) V(x) over the grid (trapezoid).
template <typename F>
double pair_with(const DensityGrid& v, F&& f) {
    double s = 0.0;
    for (std::size_t j = 1; j < v.m; ++j) {
        s += f(v.x(j)) * v.values[j];
    }
    s += 0.5 * f(v.x(v.m)) * v.values[v.m];
    return s * v.dx();
}

/// Cell averages of nu0 on the grid, rescaled to unit trapezoid mass.
inline DensityGrid discretize(const InitialDensity& nu0, double x_max, std::size_t m) {
    DensityGrid v = DensityGrid::zeros(x_max, m);
    const double dx = v.dx();
    for (std::size_t j = 1; j < m; ++j) {
        v.values[j] = (nu0.cdf(v.x(j) + 0.5 * dx) - nu0.cdf(v.x(j) - 0.5 * dx)) / dx;
    }
    v.values[m] = (nu0.cdf(x_max) - nu0.cdf(x_max - 0.5 * dx)) / (0.5 * dx);
    const double mass = total_mass(v);
    if (!(mass > 0.0)) {
        throw DomainError("discretize: initial density has no mass on the grid");
    }
    for (double& x : v.values) {
        x /= mass;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Single steps

/// Exact step for spatially constant mu and sigma: convolution with the
/// transition density of a Brownian motion with drift b and variance s over
/// the step, killed at zero,
///   q(x0, x) = p_s(x - x0 - b) (1 - exp(-2 x0 x / s)),
/// where b = mu delta + sigma rho dw and s = sigma^2 (1 - rho^2) delta.
/// Trapezoid quadrature in x0; kernel weights are renormalized to unit
/// discrete mass and truncated at `width` standard deviations.
inline DensityGrid step_kernel(const DensityGrid& v, const CoefficientSet& c, double t, double delta, double dw,
                               double ell, double width = 10.0) {
    const auto coeff = eval_coefficients(c, t, 0.0, ell);
    const double b = coeff.mu * delta + coeff.sigma * coeff.rho * dw;
    const double s = coeff.sigma * coeff.sigma * (1.0 - coeff.rho * coeff.rho) * delta;
    if (!(s > 0.0) || !std::isfinite(b)) {
        throw NumericError("step_kernel: degenerate step variance or non-finite drift");
    }
    const double dx = v.dx();
    const double sd = std::sqrt(s);
    const auto m = static_cast<std::ptrdiff_t>(v.m);

    // weights g[k - kmin] = p_s(k dx - b) for offsets k = j - i
    const auto kmin = static_cast<std::ptrdiff_t>(std::floor((b - width * sd) / dx));
    const auto kmax = static_cast<std::ptrdiff_t>(std::ceil((b + width * sd) / dx));
    std::vector<double> g(static_cast<std::size_t>(kmax - kmin + 1));
    double gsum = 0.0;
    for (std::ptrdiff_t k = kmin; k <= kmax; ++k) {
        const double z = (static_cast<double>(k) * dx - b) / sd;
        const double w = std::exp(-0.5 * z * z);
        g[static_cast<std::size_t>(k - kmin)] = w;
        gsum += w;
    }
    for (double& w : g) {
        w /= gsum;  // now sum(w) = 1, i.e. dx * sum(p) = 1
    }

    // trapezoid weights folded into the source values
    std::vector<double> src(v.values);
    src[0] = 0.0;
    src[v.m] *= 0.5;

    DensityGrid out = DensityGrid::zeros(v.x_max, v.m, v.time + delta);
    const double image_cutoff = 40.0;  // exp(-40) below double resolution relative to 1
    for (std::ptrdiff_t j = 1; j <= m; ++j) {
        const std::ptrdiff_t i_lo = std::max<std::ptrdiff_t>(1, j - kmax);
        const std::ptrdiff_t i_hi = std::min<std::ptrdiff_t>(m, j - kmin);
        if (i_lo > i_hi) {
            continue;
        }
        const double xj = static_cast<double>(j) * dx;
        const double xi_max = static_cast<double>(i_hi) * dx;
        double acc = 0.0;
        if (2.0 * xj * xi_max / s > image_cutoff || 2.0 * xj * (static_cast<double>(i_lo) * dx) / s > image_cutoff) {
            // image term may matter for some sources; check each pair
            for (std::ptrdiff_t i = i_lo; i <= i_hi; ++i) {
                const double arg = 2.0 * xj * static_cast<double>(i) * dx / s;
                const double kill = arg > image_cutoff ? 1.0 : -std::expm1(-arg);
                acc += g[static_cast<std::size_t>(j - i - kmin)] * src[static_cast<std::size_t>(i)] * kill;
            }
        } else {
            for (std::ptrdiff_t i = i_lo; i <= i_hi; ++i) {
                const double arg = 2.0 * xj * static_cast<double>(i) * dx / s;
                acc += g[static_cast<std::size_t>(j - i - kmin)] * src[static_cast<std::size_t>(i)] * -std::expm1(-arg);
            }
        }
        out.values[static_cast<std::size_t>(j)] = acc;
    }
    return out;
}

struct FdStepStats {
    std::size_t substeps = 0;
    double max_cfl = 0.0;
    double clipped_mass = 0.0;
};

/// Conservative finite-volume step on the node-centred cells
/// [x_j - dx/2, x_j + dx/2] (half cell at x_max), with V = 0 at x = 0 and
/// zero flux at x_max. With the systemic path linear over the step the
/// density solves
///   d_t V = d_x[ D d_x V - u V ],
///   D = (1 - rho^2) sigma^2 / 2,
///   u = mu - (1 - rho^2/2) sigma d_x sigma + sigma rho dw/delta,
/// which is the Ito form with the transport noise moved to Stratonovich form.
/// Transport: explicit flux-limited upwind (van Leer limiter). Diffusion:
/// Crank-Nicolson. Sub-steps keep the advective CFL <= 0.9 and the
/// Crank-Nicolson explicit half positivity-preserving.
inline DensityGrid step_fd(const DensityGrid& v, const CoefficientSet& c, double t, double delta, double dw,
                           double ell, bool adaptive_substeps = true, FdStepStats* stats = nullptr) {
    const std::size_t m = v.m;
    const double dx = v.dx();
    const double rho = c.rho(t, ell);
    const double h = kDerivativeStep;

    std::vector<double> u(m);  // face j+1/2, j = 0..m-1
    std::vector<double> d(m);
    double umax = 0.0, dmax = 0.0, outflow_max = 0.0;
    for (std::size_t f = 0; f < m; ++f) {
        const double xf = (static_cast<double>(f) + 0.5) * dx;
        const double sigma = c.sigma(t, xf);
        const double dsigma = (c.sigma(t, xf + h) - c.sigma(t, xf - h)) / (2.0 * h);
        u[f] = c.mu(t, xf, ell) - (1.0 - 0.5 * rho * rho) * sigma * dsigma + sigma * rho * dw / delta;
        d[f] = 0.5 * (1.0 - rho * rho) * sigma * sigma;
        if (!std::isfinite(u[f]) || !std::isfinite(d[f])) {
            throw NumericError("step_fd: non-finite coefficient at x = " + std::to_string(xf));
        }
        umax = std::max(umax, std::fabs(u[f]));
        dmax = std::max(dmax, d[f]);
    }
    for (std::size_t j = 1; j < m; ++j) {
        outflow_max = std::max(outflow_max, std::max(u[j], 0.0) + std::max(-u[j - 1], 0.0));
    }

    std::size_t substeps = 1;
    const double adv_speed = std::max(umax, outflow_max);
    if (adaptive_substeps) {
        const auto n_adv = static_cast<std::size_t>(std::ceil(adv_speed * delta / (0.9 * dx)));
        const auto n_diff = static_cast<std::size_t>(std::ceil(dmax * delta / (dx * dx)));
        substeps = std::max<std::size_t>({1, n_adv, n_diff});
    } else if (umax * delta / dx > 1.0) {
        throw NumericError("step_fd: advective CFL " + std::to_string(umax * delta / dx) +
                           " > 1 without adaptive sub-stepping");
    }
    const double dt = delta / static_cast<double>(substeps);

    // Crank-Nicolson operator on unknowns V_1..V_m
    const double inv_dx2 = 1.0 / (dx * dx);
    std::vector<double> lower(m, 0.0), upper(m, 0.0), centre(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t j = r + 1;
        if (j < m) {
            lower[r] = (j >= 2) ? d[j - 1] * inv_dx2 : 0.0;
            upper[r] = d[j] * inv_dx2;
            centre[r] = -(d[j - 1] + d[j]) * inv_dx2;
        } else {
            lower[r] = 2.0 * d[m - 1] * inv_dx2;
            centre[r] = -2.0 * d[m - 1] * inv_dx2;
        }
    }
    std::vector<double> lhs_lower(m), lhs_diag(m), lhs_upper(m);
    for (std::size_t r = 0; r < m; ++r) {
        lhs_lower[r] = -0.5 * dt * lower[r];
        lhs_diag[r] = 1.0 - 0.5 * dt * centre[r];
        lhs_upper[r] = -0.5 * dt * upper[r];
    }

    DensityGrid out = v;
    out.time = v.time + delta;
    std::vector<double>& val = out.values;
    val[0] = 0.0;
    std::vector<double> flux(m + 1, 0.0);  // flux[f] at face f-1/2; flux[0] unused, flux[m] ... see below
    std::vector<double> rhs(m);
    double clipped = 0.0;

    auto value = [&](std::ptrdiff_t j) -> double {
        if (j < 0) {
            return -val[static_cast<std::size_t>(-j)];  // odd reflection at the absorbing boundary
        }
        if (j > static_cast<std::ptrdiff_t>(m)) {
            return val[m];
        }
        return val[static_cast<std::size_t>(j)];
    };

    for (std::size_t sub = 0; sub < substeps; ++sub) {
        // transport fluxes F_f at face f+1/2
        std::vector<double> face(m, 0.0);
        for (std::size_t f = 0; f < m; ++f) {
            const double uf = u[f];
            const auto jl = static_cast<std::ptrdiff_t>(f);
            if (f == 0) {
                face[f] = std::min(uf, 0.0) * val[1];
                continue;
            }
            const double jump = value(jl + 1) - value(jl);
            double upwind, upstream_jump;
            if (uf >= 0.0) {
                upwind = value(jl);
                upstream_jump = value(jl) - value(jl - 1);
            } else {
                upwind = value(jl + 1);
                upstream_jump = value(jl + 2) - value(jl + 1);
            }
            double limiter = 0.0;
            if (jump != 0.0) {
                const double theta = upstream_jump / jump;
                limiter = (theta + std::fabs(theta)) / (1.0 + std::fabs(theta));
            }
            const double cfl = std::fabs(uf) * dt / dx;
            face[f] = uf * upwind + 0.5 * std::fabs(uf) * (1.0 - cfl) * limiter * jump;
        }
        for (std::size_t j = 1; j < m; ++j) {
            val[j] -= dt / dx * (face[j] - face[j - 1]);
        }
        val[m] -= dt / (0.5 * dx) * (0.0 - face[m - 1]);

        // diffusion, Crank-Nicolson
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t j = r + 1;
            double a = centre[r] * val[j] + lower[r] * (j >= 2 ? val[j - 1] : 0.0);
            if (j < m) {
                a += upper[r] * val[j + 1];
            }
            rhs[r] = val[j] + 0.5 * dt * a;
        }
        solve_tridiagonal(lhs_lower, lhs_diag, lhs_upper, rhs);
        for (std::size_t r = 0; r < m; ++r) {
            double x = rhs[r];
            if (x < 0.0) {
                if (x < -1e-12) {
                    throw NumericError("step_fd: density undershoot " + std::to_string(x) + " at node " +
                                       std::to_string(r + 1) + " (CFL violation?)");
                }
                clipped -= x;
                x = 0.0;
            }
            val[r + 1] = x;
        }
    }
    if (stats) {
        stats->substeps = substeps;
        stats->max_cfl = adv_speed * dt / dx;
        stats->clipped_mass = clipped * dx;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full solve

enum class Backend { kernel, fd };

inline const char* backend_name(Backend b) { return b == Backend::kernel ? "kernel" : "fd"; }

struct SolverConfig {
    Backend backend = Backend::kernel;
    TimeGrid grid{1.0, 1000};
    double dx = 5e-3;
    double x_max = 0.0;  // <= 0: support bound of nu0 + 8 sigma_max sqrt(T)
    bool adaptive_substeps = true;
    double mass_tolerance = 1e-9;
    double kernel_width = 10.0;
    /// Also keep every k-th state as a snapshot (0 = only requested times).
    std::size_t snapshot_stride = 0;
};

/// Largest sampled sigma over [0,T] x [0, x_hi].
inline double sigma_max(const CoefficientSet& c, double horizon, double x_hi) {
    double s = 0.0;
    for (int it = 0; it <= 10; ++it) {
        const double t = horizon * it / 10.0;
        for (int ix = 0; ix <= 100; ++ix) {
            s = std::max(s, std::fabs(c.sigma(t, x_hi * ix / 100.0)));
        }
    }
    return s;
}

inline double default_x_max(const InitialDensity& nu0, const CoefficientSet& c, double horizon) {
    const double support = nu0.support_upper();
    const double smax = sigma_max(c, horizon, support + 10.0 * std::sqrt(horizon));
    return support + 8.0 * smax * std::sqrt(horizon);
}

struct SolveResult {
    LossPath loss;
    std::vector<DensityGrid> snapshots;
    /// Steps where the raw quadrature loss dipped (within tolerance) and was
    /// held at the previous value.
    std::size_t monotone_clamps = 0;
    double max_loss_dip = 0.0;
};

class SpdeSolver {
public:
    SpdeSolver(SolverConfig cfg, CoefficientSet c, const InitialDensity& nu0)
        : cfg_(std::move(cfg)), coeffs_(std::move(c)) {
        if (cfg_.backend == Backend::kernel && !coeffs_.space_homogeneous) {
            throw ConfigError("kernel backend requires spatially constant mu and sigma");
        }
        if (!(cfg_.dx > 0.0)) {
            throw ConfigError("solver: dx must be positive");
        }
        if (!(cfg_.mass_tolerance >= 0.0)) {
            throw ConfigError("solver: mass_tolerance must be >= 0");
        }
        if (cfg_.x_max <= 0.0) {
            cfg_.x_max = default_x_max(nu0, coeffs_, cfg_.grid.horizon());
        }
        const auto m = static_cast<std::size_t>(std::ceil(cfg_.x_max / cfg_.dx - 1e-9));
        cfg_.x_max = static_cast<double>(m) * cfg_.dx;
        initial_ = discretize(nu0, cfg_.x_max, m);
    }

    const SolverConfig& config() const noexcept { return cfg_; }
    const CoefficientSet& coefficients() const noexcept { return coeffs_; }
    const DensityGrid& initial() const noexcept { return initial_; }

    DensityGrid step(const DensityGrid& v, double t, double delta, double dw, double ell) const {
        if (cfg_.backend == Backend::kernel) {
            return step_kernel(v, coeffs_, t, delta, dw, ell, cfg_.kernel_width);
        }
        return step_fd(v, coeffs_, t, delta, dw, ell, cfg_.adaptive_substeps);
    }

    /// L^(0) = 0; for n = 1..N: freeze l = L^(n-1), step with the n-th
    /// increment, L^(n) = 1 - mass(V^(n)).
    SolveResult solve(const BrownianPath& w, std::span<const double> snapshot_times = {}) const {
        const TimeGrid& grid = cfg_.grid;
        if (!(w.grid == grid) || w.increments.size() != grid.n_steps()) {
            throw DomainError("solve: Brownian path is not on the solver grid");
        }
        std::vector<std::size_t> wanted(snapshot_times.size());
        for (std::size_t s = 0; s < snapshot_times.size(); ++s) {
            wanted[s] = grid.nearest_index(snapshot_times[s]);
        }
        std::vector<std::optional<DensityGrid>> requested(snapshot_times.size());
        SolveResult result{LossPath(grid), {}, 0, 0.0};
        std::vector<DensityGrid> strided;
        auto record = [&](std::size_t k, const DensityGrid& v) {
            for (std::size_t s = 0; s < wanted.size(); ++s) {
                if (wanted[s] == k) {
                    requested[s] = v;
                }
            }
            if (cfg_.snapshot_stride > 0 && (k % cfg_.snapshot_stride == 0 || k == grid.n_steps())) {
                strided.push_back(v);
            }
        };

        DensityGrid v = initial_;
        v.time = 0.0;
        record(0, v);
        double previous = 0.0;
        for (std::size_t n = 1; n <= grid.n_steps(); ++n) {
            const double t = grid.time(n - 1);
            v = step(v, t, grid.delta(), w.increments[n - 1], previous);
            v.time = grid.time(n);
            double current = std::clamp(1.0 - total_mass(v), 0.0, 1.0);
            if (current < previous) {
                const double dip = previous - current;
                if (dip > cfg_.mass_tolerance) {
                    throw NumericError("solve: loss decreased by " + std::to_string(dip) + " at step " +
                                       std::to_string(n));
                }
                result.max_loss_dip = std::max(result.max_loss_dip, dip);
                ++result.monotone_clamps;
                current = previous;
            }
            result.loss.values[n] = current;
            previous = current;
            record(n, v);
        }
        for (auto& s : requested) {
            result.snapshots.push_back(std::move(*s));
        }
        for (auto& s : strided) {
            result.snapshots.push_back(std::move(s));
        }
        return result;
    }

private:
    SolverConfig cfg_;
    CoefficientSet coeffs_;
    DensityGrid initial_;
};

inline SolveResult solve(const SolverConfig& cfg, const CoefficientSet& c, const InitialDensity& nu0,
                         const BrownianPath& w, std::span<const double> snapshot_times = {}) {
    return SpdeSolver(cfg, c, nu0).solve(w, snapshot_times);
}

// ---------------------------------------------------------------------------
// Heat-grid file

/// Plain-text matrix: header "t_min t_max x_min x_max n_t n_x", then one row
/// of n_x values per snapshot. Snapshots must share a spatial grid and are
/// assumed evenly spaced in time.
inline void write_heatmap(std::ostream& os, std::span<const DensityGrid> snapshots) {
    if (snapshots.size() < 2) {
        throw DomainError("heatmap: need at least two snapshots");
    }
    const auto& first = snapshots.front();
    for (const auto& s : snapshots) {
        if (s.m != first.m || s.x_max != first.x_max) {
            throw DomainError("heatmap: snapshots must share a spatial grid");
        }
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g %.17g ", first.time, snapshots.back().time);
    os << buf;
    std::snprintf(buf, sizeof buf, "%.17g %.17g ", 0.0, first.x_max);
    os << buf << snapshots.size() << ' ' << (first.m + 1) << '\n';
    for (const auto& s : snapshots) {
        for (std::size_t j = 0; j <= s.m; ++j) {
            std::snprintf(buf, sizeof buf, "%.12g", s.values[j]);
            os << (j == 0 ? "" : " ") << buf;
        }
        os << '\n';
    }
}

inline std::vector<DensityGrid> read_heatmap(std::istream& is) {
    double t_min = 0, t_max = 0, x_min = 0, x_max = 0;
    std::size_t n_t = 0, n_x = 0;
    if (!(is >> t_min >> t_max >> x_min >> x_max >> n_t >> n_x) || n_t < 2 || n_x < 3) {
        throw ConfigError("heatmap: malformed header");
    }
    std::vector<DensityGrid> out;
    out.reserve(n_t);
    for (std::size_t r = 0; r < n_t; ++r) {
        DensityGrid g = DensityGrid::zeros(x_max, n_x - 1);
        g.time = t_min + (t_max - t_min) * static_cast<double>(r) / static_cast<double>(n_t - 1);
        for (auto& v : g.values) {
            if (!(is >> v)) {
                throw ConfigError("heatmap: truncated matrix");
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace mvloss
