#pragma once

// Finite-N particle system: correlated diffusions whose coefficients depend on
// the current proportion of absorbed particles, killed on hitting zero.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mvloss/brownian.hpp"
#include "mvloss/coefficients.hpp"
#include "mvloss/errors.hpp"
#include "mvloss/initial_density.hpp"
#include "mvloss/loss_path.hpp"
#include "mvloss/rng.hpp"

namespace mvloss {

struct ParticleEnsemble {
    std::vector<double> positions;
    std::vector<std::uint8_t> alive;
    std::vector<std::optional<double>> tau;  // absorption times; unset while alive
    double time = 0.0;
    std::size_t absorbed = 0;

    std::size_t size() const noexcept { return positions.size(); }
    double loss() const noexcept { return static_cast<double>(absorbed) / static_cast<double>(positions.size()); }
    std::size_t alive_count() const noexcept { return size() - absorbed; }
};

/// N i.i.d. draws from nu0 by inverse CDF; particle i uses its own counter
/// coordinate so the draw does not depend on N.
inline ParticleEnsemble init_ensemble(const InitialDensity& nu0, std::size_t n, std::uint64_t seed) {
    if (n == 0) {
        throw DomainError("init_ensemble: need at least one particle");
    }
    ParticleEnsemble e;
    e.positions.resize(n);
    e.alive.assign(n, 1);
    e.tau.assign(n, std::nullopt);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = sample_initial_position(nu0, seed, static_cast<std::uint32_t>(i + 1));
        if (!(x > 0.0)) {
            throw DomainError("init_ensemble: initial position " + std::to_string(x) + " not in (0, inf)");
        }
        e.positions[i] = x;
    }
    return e;
}

/// One Euler-Maruyama step of length delta with the loss frozen at its value
/// at the start of the step. A particle is absorbed when the update lands at
/// or below zero or, with `bridge_correction`, when uniforms[i] falls below
/// the Brownian-bridge crossing probability exp(-2 x x' / (sigma^2 delta)).
/// Absorbed particles keep their last pre-absorption position.
inline void step(ParticleEnsemble& e, const CoefficientSet& c, double dw_systemic, std::span<const double> dw_idio,
                 std::span<const double> uniforms, double delta, bool bridge_correction) {
    const std::size_t n = e.size();
    if (dw_idio.size() != n) {
        throw DomainError("step: dw_idio must have one entry per particle");
    }
    if (bridge_correction && uniforms.size() != n) {
        throw DomainError("step: bridge correction needs one uniform per particle");
    }
    if (!(delta > 0.0)) {
        throw DomainError("step: delta must be positive");
    }
    const double t = e.time;
    const double loss = e.loss();
    const double rho = c.rho(t, loss);
    const double idio_scale = std::sqrt(1.0 - rho * rho);
    const double t_end = t + delta;
    std::size_t newly_absorbed = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!e.alive[i]) {
            continue;
        }
        const double x = e.positions[i];
        const double sigma = c.sigma(t, x);
        const double next = x + c.mu(t, x, loss) * delta + sigma * rho * dw_systemic + sigma * idio_scale * dw_idio[i];
        if (!std::isfinite(next)) {
            throw NumericError("step: non-finite position for particle " + std::to_string(i));
        }
        bool killed = next <= 0.0;
        if (!killed && bridge_correction) {
            killed = uniforms[i] < std::exp(-2.0 * x * next / (sigma * sigma * delta));
        }
        if (killed) {
            e.alive[i] = 0;
            e.tau[i] = t_end;
            ++newly_absorbed;
        } else {
            e.positions[i] = next;
        }
    }
    e.absorbed += newly_absorbed;
    e.time = t_end;
}

// ---------------------------------------------------------------------------

/// Histogram of surviving particles on uniform bins over [0, x_max].
/// Survivors beyond x_max are counted in the last bin, so
/// sum(counts)/n + loss == 1 exactly.
struct EmpiricalSnapshot {
    double time = 0.0;
    double x_max = 0.0;
    std::vector<std::size_t> counts;
    std::size_t n = 0;

    double bin_width() const { return x_max / static_cast<double>(counts.size()); }
    double bin_left(std::size_t i) const { return static_cast<double>(i) * bin_width(); }
    double bin_right(std::size_t i) const { return static_cast<double>(i + 1) * bin_width(); }

    double alive_fraction() const {
        std::size_t total = 0;
        for (auto c : counts) {
            total += c;
        }
        return static_cast<double>(total) / static_cast<double>(n);
    }

    /// nu^N_t(a,b), reading each bin as uniformly filled.
    double mass_between(double a, double b) const {
        double mass = 0.0;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const double lo = std::max(a, bin_left(i));
            const double hi = std::min(b, bin_right(i));
            if (hi > lo) {
                mass += static_cast<double>(counts[i]) * (hi - lo) / bin_width();
            }
        }
        return mass / static_cast<double>(n);
    }
};

inline EmpiricalSnapshot take_snapshot(const ParticleEnsemble& e, double x_max, std::size_t bins) {
    EmpiricalSnapshot s{e.time, x_max, std::vector<std::size_t>(bins, 0), e.size()};
    const double width = x_max / static_cast<double>(bins);
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (!e.alive[i]) {
            continue;
        }
        const auto b = static_cast<std::size_t>(std::max(0.0, e.positions[i] / width));
        ++s.counts[std::min(b, bins - 1)];
    }
    return s;
}

inline void write_snapshot_csv(std::ostream& os, const EmpiricalSnapshot& s) {
    os << "bin_left,bin_right,count\n";
    char buf[96];
    for (std::size_t i = 0; i < s.counts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", s.bin_left(i), s.bin_right(i), s.counts[i]);
        os << buf;
    }
}

/// Per-step record of a particle run, enough to rebuild the finite evolution
/// equation: states k = 0..n_steps and the idiosyncratic increments of each
/// step.
struct ParticleTrajectory {
    std::vector<std::vector<double>> positions;
    std::vector<std::vector<std::uint8_t>> alive;
    std::vector<double> loss;
    std::vector<std::vector<double>> dw_idio;
    std::size_t n = 0;
};

struct ParticleOptions {
    bool bridge_correction = true;
    double histogram_x_max = 10.0;
    std::size_t histogram_bins = 100;
    /// Particle i draws its increments from stream stream_permutation[i]
    /// (1-based). Empty means stream i+1.
    std::vector<std::uint32_t> stream_permutation;
    bool record_trajectory = false;
};

struct ParticleRun {
    LossPath loss;
    std::vector<EmpiricalSnapshot> snapshots;
    std::optional<ParticleTrajectory> trajectory;
};

/// Runs the particle system on the grid of `systemic`. Idiosyncratic
/// increments come from streams 1..N of `seed`; the run is a deterministic
/// function of (seed, systemic path, options).
inline ParticleRun simulate(const InitialDensity& nu0, const CoefficientSet& c, std::size_t n,
                            const BrownianPath& systemic, std::uint64_t seed, std::span<const double> snapshot_times,
                            const ParticleOptions& options = {}) {
    const TimeGrid& grid = systemic.grid;
    if (systemic.increments.size() != grid.n_steps()) {
        throw DomainError("simulate: systemic path does not match its grid");
    }
    if (!options.stream_permutation.empty() && options.stream_permutation.size() != n) {
        throw DomainError("simulate: stream permutation must have N entries");
    }
    ParticleEnsemble e = init_ensemble(nu0, n, seed);
    ParticleRun run{LossPath(grid), {}, std::nullopt};

    // snapshot requests grouped by grid index, emitted in request order
    std::vector<std::size_t> snap_index(snapshot_times.size());
    for (std::size_t s = 0; s < snapshot_times.size(); ++s) {
        snap_index[s] = grid.nearest_index(snapshot_times[s]);
    }
    std::vector<std::optional<EmpiricalSnapshot>> snaps(snapshot_times.size());
    auto record_snapshots = [&](std::size_t k) {
        for (std::size_t s = 0; s < snap_index.size(); ++s) {
            if (snap_index[s] == k) {
                snaps[s] = take_snapshot(e, options.histogram_x_max, options.histogram_bins);
            }
        }
    };

    ParticleTrajectory traj;
    if (options.record_trajectory) {
        traj.n = n;
        traj.positions.push_back(e.positions);
        traj.alive.push_back(e.alive);
        traj.loss.push_back(0.0);
    }
    record_snapshots(0);

    const double sqrt_delta = std::sqrt(grid.delta());
    std::vector<double> dw(n, 0.0);
    std::vector<double> uniforms(n, 0.0);
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!e.alive[i]) {
                dw[i] = 0.0;
                continue;
            }
            const std::uint32_t stream =
                options.stream_permutation.empty() ? static_cast<std::uint32_t>(i + 1) : options.stream_permutation[i];
            const auto z = counter_normal(seed, stream, k);
            dw[i] = sqrt_delta * z.normal;
            uniforms[i] = z.uniform;
        }
        e.time = grid.time(k);
        step(e, c, systemic.increments[k], dw, uniforms, grid.delta(), options.bridge_correction);
        run.loss.values[k + 1] = e.loss();
        if (options.record_trajectory) {
            traj.dw_idio.push_back(dw);
            traj.positions.push_back(e.positions);
            traj.alive.push_back(e.alive);
            traj.loss.push_back(e.loss());
        }
        record_snapshots(k + 1);
    }
    for (auto& s : snaps) {
        run.snapshots.push_back(std::move(*s));
    }
    if (options.record_trajectory) {
        run.trajectory = std::move(traj);
    }
    return run;
}

// ---------------------------------------------------------------------------
// Finite evolution equation

/// A test function with phi(0) = 0 and its first two derivatives.
struct TestFunction {
    std::function<double(double)> f;
    std::function<double(double)> df;
    std::function<double(double)> d2f;
};

/// phi(x) = x exp(-x^2 / (2 s^2)).
inline TestFunction gaussian_test_function(double scale = 1.0) {
    const double s2 = scale * scale;
    return {[s2](double x) { return x * std::exp(-0.5 * x * x / s2); },
            [s2](double x) { return std::exp(-0.5 * x * x / s2) * (1.0 - x * x / s2); },
            [s2](double x) { return std::exp(-0.5 * x * x / s2) * (x * x * x / (s2 * s2) - 3.0 * x / s2); }};
}

inline TestFunction zero_test_function() {
    auto zero = [](double) { return 0.0; };
    return {zero, zero, zero};
}

inline void require_vanishing_at_origin(const TestFunction& phi) {
    if (phi.f(0.0) != 0.0) {
        throw DomainError("test function must vanish at the origin");
    }
}

/// sup over grid times of |I^N_t(phi)|, the idiosyncratic driver
///   I^N_t = (1/N) sum_i int_0^t sigma sqrt(1 - rho^2) phi'(X^i) 1{s < tau^i} dW^i,
/// accumulated with left-point sums from the recorded increments.
inline double idiosyncratic_driver(const ParticleTrajectory& traj, const CoefficientSet& c, const TimeGrid& grid,
                                   const TestFunction& phi) {
    require_vanishing_at_origin(phi);
    double integral = 0.0;
    double sup = 0.0;
    for (std::size_t k = 0; k < traj.dw_idio.size(); ++k) {
        const double t = grid.time(k);
        const double rho = c.rho(t, traj.loss[k]);
        const double scale = std::sqrt(1.0 - rho * rho);
        double sum = 0.0;
        for (std::size_t i = 0; i < traj.n; ++i) {
            if (traj.alive[k][i]) {
                const double x = traj.positions[k][i];
                sum += c.sigma(t, x) * scale * phi.df(x) * traj.dw_idio[k][i];
            }
        }
        integral += sum / static_cast<double>(traj.n);
        sup = std::max(sup, std::fabs(integral));
    }
    return sup;
}

/// Largest deviation over grid times between nu^N_t(phi) - nu^N_0(phi) and
/// the left-point sums of the drift, diffusion, systemic and idiosyncratic
/// terms of the finite evolution equation.
inline double finite_evolution_residual(const ParticleTrajectory& traj, const CoefficientSet& c,
                                        const BrownianPath& systemic, const TestFunction& phi) {
    require_vanishing_at_origin(phi);
    const TimeGrid& grid = systemic.grid;
    const double inv_n = 1.0 / static_cast<double>(traj.n);
    auto pairing = [&](std::size_t k) {
        double s = 0.0;
        for (std::size_t i = 0; i < traj.n; ++i) {
            if (traj.alive[k][i]) {
                s += phi.f(traj.positions[k][i]);
            }
        }
        return s * inv_n;
    };
    const double initial = pairing(0);
    double accumulated = 0.0;
    double worst = 0.0;
    for (std::size_t k = 0; k < traj.dw_idio.size(); ++k) {
        const double t = grid.time(k);
        const double loss = traj.loss[k];
        const double rho = c.rho(t, loss);
        const double idio = std::sqrt(1.0 - rho * rho);
        double drift = 0.0, diffusion = 0.0, systemic_term = 0.0, idio_term = 0.0;
        for (std::size_t i = 0; i < traj.n; ++i) {
            if (!traj.alive[k][i]) {
                continue;
            }
            const double x = traj.positions[k][i];
            const double sigma = c.sigma(t, x);
            const double d1 = phi.df(x);
            drift += c.mu(t, x, loss) * d1;
            diffusion += 0.5 * sigma * sigma * phi.d2f(x);
            systemic_term += sigma * rho * d1;
            idio_term += sigma * idio * d1 * traj.dw_idio[k][i];
        }
        accumulated += inv_n * ((drift + diffusion) * grid.delta() + systemic_term * systemic.increments[k] + idio_term);
        worst = std::max(worst, std::fabs(pairing(k + 1) - initial - accumulated));
    }
    return worst;
}

}  // namespace mvloss
