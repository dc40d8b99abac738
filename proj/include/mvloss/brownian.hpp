#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <vector>

#include "mvloss/errors.hpp"
#include "mvloss/rng.hpp"

namespace mvloss {

/// Uniform grid t_k = k * delta, k = 0..n_steps, on [0, horizon].
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t n_steps) : horizon_(horizon), n_steps_(n_steps) {
        if (!(horizon > 0.0) || !std::isfinite(horizon)) {
            throw DomainError("TimeGrid: horizon must be positive and finite");
        }
        if (n_steps == 0) {
            throw DomainError("TimeGrid: n_steps must be >= 1");
        }
        delta_ = horizon / static_cast<double>(n_steps);
    }

    double horizon() const noexcept { return horizon_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    double delta() const noexcept { return delta_; }

    /// The last node is the horizon itself, not n * delta.
    double time(std::size_t k) const noexcept {
        return k >= n_steps_ ? horizon_ : static_cast<double>(k) * delta_;
    }

    /// Nearest grid index to time t (clamped to the grid).
    std::size_t nearest_index(double t) const noexcept {
        if (t <= 0.0) {
            return 0;
        }
        const double k = std::round(t / delta_);
        return k >= static_cast<double>(n_steps_) ? n_steps_ : static_cast<std::size_t>(k);
    }

    TimeGrid refined(std::size_t factor) const { return {horizon_, n_steps_ * factor}; }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
        return a.horizon_ == b.horizon_ && a.n_steps_ == b.n_steps_;
    }

private:
    double horizon_;
    std::size_t n_steps_;
    double delta_;
};

/// A discrete Brownian trajectory stored as increments on a time grid.
/// Stream 0 is the systemic driver; stream i >= 1 the idiosyncratic driver
/// of particle i.
struct BrownianPath {
    TimeGrid grid;
    std::vector<double> increments;
    std::uint64_t seed = 0;
    std::uint32_t stream_id = 0;
    std::uint16_t refinement_level = 0;
    bool antithetic = false;

    /// w at grid node k; w_0 = 0.
    double value(std::size_t k) const {
        double w = 0.0;
        for (std::size_t j = 0; j < k && j < increments.size(); ++j) {
            w += increments[j];
        }
        return w;
    }

    std::vector<double> values() const {
        std::vector<double> w(increments.size() + 1, 0.0);
        for (std::size_t j = 0; j < increments.size(); ++j) {
            w[j + 1] = w[j] + increments[j];
        }
        return w;
    }

    double terminal() const { return value(increments.size()); }
};

/// Gaussian increment k of (seed, stream) on a grid with step delta. This is
/// the single definition shared by path sampling and the particle engine.
inline double brownian_increment(std::uint64_t seed, std::uint32_t stream, std::size_t k, double sqrt_delta) {
    return sqrt_delta * counter_normal(seed, stream, k).normal;
}

inline BrownianPath sample(const TimeGrid& grid, std::uint64_t seed, std::uint32_t stream_id) {
    BrownianPath p{grid, std::vector<double>(grid.n_steps()), seed, stream_id, 0, false};
    const double sd = std::sqrt(grid.delta());
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        p.increments[k] = brownian_increment(seed, stream_id, k, sd);
    }
    return p;
}

/// Element-wise negation; metadata kept, antithetic flag toggled.
inline BrownianPath negate(const BrownianPath& p) {
    BrownianPath q = p;
    for (double& dw : q.increments) {
        dw = -dw;
    }
    q.antithetic = !p.antithetic;
    return q;
}

/// Brownian path plus a deterministic drift: w_t + theta * t.
inline BrownianPath with_drift(const BrownianPath& p, double theta) {
    BrownianPath q = p;
    const double shift = theta * p.grid.delta();
    for (double& dw : q.increments) {
        dw += shift;
    }
    return q;
}

/// Subdivide every step into `factor` sub-steps. Values at the original
/// nodes are kept; interior values are Brownian-bridge draws keyed by
/// (seed, stream, refinement level, fine index). Bridge noise is negated on
/// antithetic paths, so refine commutes with negate.
inline BrownianPath refine(const BrownianPath& p, std::size_t factor) {
    if (factor < 2) {
        throw DomainError("refine: factor must be >= 2");
    }
    BrownianPath q{p.grid.refined(factor), {}, p.seed, p.stream_id, static_cast<std::uint16_t>(p.refinement_level + 1),
                   p.antithetic};
    q.increments.resize(p.increments.size() * factor);
    const double h = q.grid.delta();
    const double sign = p.antithetic ? -1.0 : 1.0;
    for (std::size_t k = 0; k < p.increments.size(); ++k) {
        double remaining = p.increments[k];  // w_{t_{k+1}} - current value
        for (std::size_t j = 0; j + 1 < factor; ++j) {
            const std::size_t fine = k * factor + j;
            const double left = static_cast<double>(factor - j) * h;  // time to the coarse node
            const double mean = remaining * h / left;
            const double var = h * (left - h) / left;
            const double z = counter_normal(p.seed, p.stream_id, fine, q.refinement_level, RandomPurpose::bridge).normal;
            const double step = mean + sign * std::sqrt(var) * z;
            q.increments[fine] = step;
            remaining -= step;
        }
        q.increments[k * factor + factor - 1] = remaining;
    }
    return q;
}

/// CSV with header "t,w", one row per grid node.
inline void write_path_csv(std::ostream& os, const BrownianPath& p) {
    os << "t,w\n";
    const auto w = p.values();
    char buf[64];
    for (std::size_t k = 0; k < w.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.grid.time(k), w[k]);
        os << buf;
    }
}

}  // namespace mvloss
