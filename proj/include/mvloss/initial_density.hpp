#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mvloss/errors.hpp"
#include "mvloss/numerics.hpp"
#include "mvloss/rng.hpp"

namespace mvloss {

/// Density V_0 of the initial law on (0, inf). Built-ins: a Gaussian
/// truncated to (0, inf) and renormalized, a step (histogram) density, and a
/// piecewise-linear density given on a grid.
class InitialDensity {
public:
    struct TruncatedGaussian {
        double mean;
        double stddev;
    };
    struct Step {
        std::vector<double> edges;    // e_0 < e_1 < ... < e_k, e_0 >= 0
        std::vector<double> heights;  // value on [e_{i}, e_{i+1})
    };
    struct Grid {
        std::vector<double> xs;      // increasing nodes
        std::vector<double> values;  // piecewise-linear between nodes, zero outside
    };

    static InitialDensity truncated_gaussian(double mean, double stddev) {
        if (!(stddev > 0.0) || !std::isfinite(mean)) {
            throw DomainError("truncated_gaussian: stddev must be > 0 and mean finite");
        }
        InitialDensity d;
        d.kind_ = TruncatedGaussian{mean, stddev};
        d.gauss_mass_ = normal_cdf(mean / stddev);
        if (!(d.gauss_mass_ > 0.0)) {
            throw DomainError("truncated_gaussian: no mass on (0, inf)");
        }
        return d;
    }

    /// Heights are rescaled to unit mass.
    static InitialDensity step(std::vector<double> edges, std::vector<double> heights) {
        if (edges.size() < 2 || heights.size() + 1 != edges.size()) {
            throw DomainError("step density: need k+1 edges for k heights");
        }
        if (edges.front() < 0.0) {
            throw DomainError("step density: mass off (0, inf)");
        }
        double mass = 0.0;
        for (std::size_t i = 0; i < heights.size(); ++i) {
            if (!(edges[i + 1] > edges[i])) {
                throw DomainError("step density: edges must be strictly increasing");
            }
            if (heights[i] < 0.0) {
                throw DomainError("step density: negative height");
            }
            mass += heights[i] * (edges[i + 1] - edges[i]);
        }
        if (!(mass > 0.0)) {
            throw DomainError("step density: zero mass");
        }
        for (double& h : heights) {
            h /= mass;
        }
        InitialDensity d;
        d.kind_ = Step{std::move(edges), std::move(heights)};
        d.build_step_cdf();
        return d;
    }

    /// Values at x <= 0 must be zero. Rescaled to unit mass.
    static InitialDensity grid(std::vector<double> xs, std::vector<double> values) {
        if (xs.size() < 2 || xs.size() != values.size()) {
            throw DomainError("grid density: need matching xs/values with at least two nodes");
        }
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i > 0 && !(xs[i] > xs[i - 1])) {
                throw DomainError("grid density: nodes must be strictly increasing");
            }
            if (values[i] < 0.0) {
                throw DomainError("grid density: negative value");
            }
            if (xs[i] <= 0.0 && values[i] != 0.0) {
                throw DomainError("grid density: mass off (0, inf)");
            }
        }
        if (xs.front() < 0.0 && values.front() != 0.0) {
            throw DomainError("grid density: mass off (0, inf)");
        }
        InitialDensity d;
        d.kind_ = Grid{std::move(xs), std::move(values)};
        d.build_grid_cdf();
        return d;
    }

    double pdf(double x) const {
        if (x <= 0.0) {
            return 0.0;
        }
        return std::visit([&](const auto& k) { return pdf_impl(k, x); }, kind_);
    }

    double cdf(double x) const {
        if (x <= 0.0) {
            return 0.0;
        }
        return std::visit([&](const auto& k) { return cdf_impl(k, x); }, kind_);
    }

    /// Inverse of the CDF for u in (0,1).
    double inverse_cdf(double u) const {
        if (!(u > 0.0 && u < 1.0)) {
            throw DomainError("inverse_cdf: u must lie in (0,1)");
        }
        return std::visit([&](const auto& k) { return inverse_impl(k, u); }, kind_);
    }

    /// x beyond which the density is zero (or negligible: mean + 10 sd for
    /// the Gaussian).
    double support_upper() const {
        return std::visit(
            [](const auto& k) -> double {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, TruncatedGaussian>) {
                    return std::max(k.mean, 0.0) + 10.0 * k.stddev;
                } else if constexpr (std::is_same_v<T, Step>) {
                    return k.edges.back();
                } else {
                    return k.xs.back();
                }
            },
            kind_);
    }

    /// Points where the density is discontinuous or has kinks; quadrature
    /// routines split there.
    std::vector<double> breakpoints() const {
        std::vector<double> pts;
        if (const auto* s = std::get_if<Step>(&kind_)) {
            pts = s->edges;
        } else if (const auto* g = std::get_if<Grid>(&kind_)) {
            pts = g->xs;
        }
        pts.erase(std::remove_if(pts.begin(), pts.end(), [](double x) { return x <= 0.0; }), pts.end());
        return pts;
    }

    const std::variant<TruncatedGaussian, Step, Grid>& kind() const noexcept { return kind_; }

    std::string describe() const {
        return std::visit(
            [](const auto& k) -> std::string {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, TruncatedGaussian>) {
                    return "truncated_gaussian(" + std::to_string(k.mean) + "," + std::to_string(k.stddev) + ")";
                } else if constexpr (std::is_same_v<T, Step>) {
                    return "step(" + std::to_string(k.heights.size()) + " pieces)";
                } else {
                    return "grid(" + std::to_string(k.xs.size()) + " nodes)";
                }
            },
            kind_);
    }

private:
    InitialDensity() = default;

    double pdf_impl(const TruncatedGaussian& g, double x) const {
        return normal_pdf((x - g.mean) / g.stddev) / (g.stddev * gauss_mass_);
    }
    double cdf_impl(const TruncatedGaussian& g, double x) const {
        // P(0 < X <= x) / P(X > 0), using the upper tails for accuracy
        const double upper0 = gauss_mass_;
        const double upper_x = normal_cdf(-(x - g.mean) / g.stddev);
        return std::clamp((upper0 - upper_x) / upper0, 0.0, 1.0);
    }
    double inverse_impl(const TruncatedGaussian& g, double u) const {
        // upper tail at x is gauss_mass * (1 - u)
        const double tail = gauss_mass_ * (1.0 - u);
        return std::max(g.mean - g.stddev * normal_quantile(tail), std::numeric_limits<double>::min());
    }

    double pdf_impl(const Step& s, double x) const {
        if (x < s.edges.front() || x >= s.edges.back()) {
            return 0.0;
        }
        const auto i = static_cast<std::size_t>(std::upper_bound(s.edges.begin(), s.edges.end(), x) - s.edges.begin()) - 1;
        return s.heights[i];
    }
    double cdf_impl(const Step& s, double x) const {
        if (x <= s.edges.front()) {
            return 0.0;
        }
        if (x >= s.edges.back()) {
            return 1.0;
        }
        const auto i = static_cast<std::size_t>(std::upper_bound(s.edges.begin(), s.edges.end(), x) - s.edges.begin()) - 1;
        return cumulative_[i] + s.heights[i] * (x - s.edges[i]);
    }
    double inverse_impl(const Step& s, double u) const {
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        auto i = static_cast<std::size_t>(it - cumulative_.begin());
        i = std::clamp<std::size_t>(i, 1, s.heights.size()) - 1;
        while (s.heights[i] == 0.0 && i + 1 < s.heights.size()) {
            ++i;
        }
        const double x = s.edges[i] + (u - cumulative_[i]) / s.heights[i];
        return std::clamp(x, std::max(s.edges[i], std::numeric_limits<double>::min()), s.edges[i + 1]);
    }

    double pdf_impl(const Grid& g, double x) const {
        if (x <= g.xs.front() || x >= g.xs.back()) {
            return 0.0;
        }
        const auto i = static_cast<std::size_t>(std::upper_bound(g.xs.begin(), g.xs.end(), x) - g.xs.begin()) - 1;
        const double w = (x - g.xs[i]) / (g.xs[i + 1] - g.xs[i]);
        return ((1.0 - w) * g.values[i] + w * g.values[i + 1]) * grid_scale_;
    }
    double cdf_impl(const Grid& g, double x) const {
        if (x <= g.xs.front()) {
            return 0.0;
        }
        if (x >= g.xs.back()) {
            return 1.0;
        }
        const auto i = static_cast<std::size_t>(std::upper_bound(g.xs.begin(), g.xs.end(), x) - g.xs.begin()) - 1;
        const double dx = x - g.xs[i];
        const double slope = (g.values[i + 1] - g.values[i]) / (g.xs[i + 1] - g.xs[i]);
        return cumulative_[i] + grid_scale_ * (g.values[i] * dx + 0.5 * slope * dx * dx);
    }
    double inverse_impl(const Grid& g, double u) const {
        auto i = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
        i = std::clamp<std::size_t>(i, 1, g.xs.size() - 1) - 1;
        // solve the quadratic CDF segment for dx
        const double a = grid_scale_ * 0.5 * (g.values[i + 1] - g.values[i]) / (g.xs[i + 1] - g.xs[i]);
        const double b = grid_scale_ * g.values[i];
        const double r = u - cumulative_[i];
        double dx;
        if (std::fabs(a) < 1e-300) {
            dx = b > 0.0 ? r / b : 0.0;
        } else {
            const double disc = std::max(0.0, b * b + 4.0 * a * r);
            dx = 2.0 * r / (b + std::sqrt(disc));
        }
        return std::clamp(g.xs[i] + dx, std::max(g.xs[i], std::numeric_limits<double>::min()), g.xs[i + 1]);
    }

    void build_step_cdf() {
        const auto& s = std::get<Step>(kind_);
        cumulative_.assign(s.edges.size(), 0.0);
        for (std::size_t i = 0; i < s.heights.size(); ++i) {
            cumulative_[i + 1] = cumulative_[i] + s.heights[i] * (s.edges[i + 1] - s.edges[i]);
        }
    }

    void build_grid_cdf() {
        auto& g = std::get<Grid>(kind_);
        cumulative_.assign(g.xs.size(), 0.0);
        for (std::size_t i = 0; i + 1 < g.xs.size(); ++i) {
            cumulative_[i + 1] = cumulative_[i] + 0.5 * (g.values[i] + g.values[i + 1]) * (g.xs[i + 1] - g.xs[i]);
        }
        const double mass = cumulative_.back();
        if (!(mass > 0.0)) {
            throw DomainError("grid density: zero mass");
        }
        grid_scale_ = 1.0 / mass;
        for (double& c : cumulative_) {
            c /= mass;
        }
    }

    std::variant<TruncatedGaussian, Step, Grid> kind_ = TruncatedGaussian{1.0, 1.0};
    double gauss_mass_ = 1.0;
    double grid_scale_ = 1.0;
    std::vector<double> cumulative_;
};

/// Draw one initial position from the density for particle `index`.
inline double sample_initial_position(const InitialDensity& nu0, std::uint64_t seed, std::uint32_t index) {
    const auto u = counter_uniforms(seed, index, 0, 0, RandomPurpose::initial_position);
    return nu0.inverse_cdf(u.first);
}

// ---------------------------------------------------------------------------

struct DensityCheck {
    std::string name;
    bool passed = true;
    double value = 0.0;
};

struct DensityReport {
    std::vector<DensityCheck> checks;
    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const DensityCheck& c) { return c.passed; });
    }
};

/// Quadrature checks of the initial-density requirements: unit mass, no mass
/// at x <= 0, square integrability, and tails that beat exp(-alpha*lambda)
/// for each alpha in `alphas`.
inline DensityReport validate_density(const InitialDensity& nu0, std::vector<double> alphas = {1.0, 2.0, 4.0, 8.0}) {
    DensityReport report;
    auto pts = nu0.breakpoints();
    const double upper = nu0.support_upper();
    pts.push_back(0.0);
    pts.push_back(upper);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

    double mass = 0.0;
    double square = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        mass += adaptive_simpson([&](double x) { return nu0.pdf(x); }, pts[i], pts[i + 1], 1e-12);
        square += adaptive_simpson([&](double x) { return nu0.pdf(x) * nu0.pdf(x); }, pts[i], pts[i + 1], 1e-12);
    }
    report.checks.push_back({"unit_mass", std::fabs(mass - 1.0) <= 1e-8, mass});
    report.checks.push_back({"positive_support", nu0.pdf(0.0) == 0.0 && nu0.pdf(-1.0) == 0.0 && nu0.cdf(0.0) == 0.0,
                             nu0.cdf(0.0)});
    report.checks.push_back({"square_integrable", std::isfinite(square), square});

    // tail(lambda) * exp(alpha * lambda) must be decreasing over the last
    // stretch of the lambda grid (or the tail must vanish identically)
    bool tail_ok = true;
    double worst = 0.0;
    for (double alpha : alphas) {
        double prev = std::numeric_limits<double>::infinity();
        for (int j = 10; j <= 20; ++j) {
            const double lambda = upper * static_cast<double>(j) / 10.0;
            const double tail = 1.0 - nu0.cdf(lambda);
            const double scaled = tail * std::exp(std::min(alpha * lambda, 700.0));
            if (tail > 0.0 && scaled > prev) {
                tail_ok = false;
                worst = std::max(worst, scaled);
            }
            prev = scaled;
        }
    }
    report.checks.push_back({"exponential_tails", tail_ok, worst});
    return report;
}

}  // namespace mvloss
