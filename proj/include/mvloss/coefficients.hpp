#pragma once

// Coefficient functions mu(t,x,l), sigma(t,x), rho(t,l) of the loss-coupled
// particle system, with the piecewise-in-loss structure for rho.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mvloss/errors.hpp"
#include "mvloss/numerics.hpp"

namespace mvloss {

using LossPiece = std::function<double(double t, double loss)>;
using DriftFunction = std::function<double(double t, double x, double loss)>;
using VolatilityFunction = std::function<double(double t, double x)>;

/// A function of (t, loss) that is Lipschitz in loss on each half-open
/// interval [theta_{i-1}, theta_i); the final interval is closed at 1.
class PiecewiseLossFunction {
public:
    PiecewiseLossFunction(std::vector<double> thresholds, std::vector<LossPiece> pieces, double lipschitz_bound)
        : thresholds_(std::move(thresholds)), pieces_(std::move(pieces)), lipschitz_bound_(lipschitz_bound) {
        if (thresholds_.size() < 2 || thresholds_.front() != 0.0 || thresholds_.back() != 1.0) {
            throw DomainError("PiecewiseLossFunction: thresholds must start at 0 and end at 1");
        }
        for (std::size_t i = 1; i < thresholds_.size(); ++i) {
            if (!(thresholds_[i] > thresholds_[i - 1])) {
                throw DomainError("PiecewiseLossFunction: thresholds must be strictly increasing");
            }
        }
        if (pieces_.size() + 1 != thresholds_.size()) {
            throw DomainError("PiecewiseLossFunction: need exactly one piece per threshold interval");
        }
        if (!(lipschitz_bound_ >= 0.0)) {
            throw DomainError("PiecewiseLossFunction: lipschitz_bound must be >= 0");
        }
    }

    static PiecewiseLossFunction constant(double value) {
        return {{0.0, 1.0}, {[value](double, double) { return value; }}, 0.0};
    }

    /// Piecewise-constant values on [theta_{i-1}, theta_i).
    static PiecewiseLossFunction piecewise_constant(std::vector<double> thresholds, const std::vector<double>& values) {
        std::vector<LossPiece> pieces;
        pieces.reserve(values.size());
        for (double v : values) {
            pieces.emplace_back([v](double, double) { return v; });
        }
        return {std::move(thresholds), std::move(pieces), 0.0};
    }

    /// Index of the piece whose interval contains `loss` (right-continuous;
    /// loss == 1 maps to the last piece).
    std::size_t piece_index(double loss) const {
        if (!(loss >= 0.0 && loss <= 1.0)) {
            throw DomainError("loss " + std::to_string(loss) + " outside [0,1]");
        }
        const auto it = std::upper_bound(thresholds_.begin(), thresholds_.end(), loss);
        const auto idx = static_cast<std::size_t>(it - thresholds_.begin());
        return std::min(idx, pieces_.size()) - 1;
    }

    double operator()(double t, double loss) const { return pieces_[piece_index(loss)](t, loss); }

    const std::vector<double>& thresholds() const noexcept { return thresholds_; }
    const LossPiece& piece(std::size_t i) const { return pieces_.at(i); }
    std::size_t piece_count() const noexcept { return pieces_.size(); }
    double lipschitz_bound() const noexcept { return lipschitz_bound_; }

private:
    std::vector<double> thresholds_;
    std::vector<LossPiece> pieces_;
    double lipschitz_bound_;
};

/// The loss-dependent correlation used for the heat-plot example: 0 on
/// [0,1/5) u [2/5,3/5) u [4/5,1] and 9/10 on [1/5,2/5) u [3/5,4/5).
inline PiecewiseLossFunction figure2_rho() {
    return PiecewiseLossFunction::piecewise_constant({0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, {0.0, 0.9, 0.0, 0.9, 0.0});
}

/// The triple (mu, sigma, rho) and the bound constant C > 1.
///
/// `space_homogeneous` marks mu and sigma as independent of x; the exact
/// kernel backend of the SPDE solver requires it.
struct CoefficientSet {
    DriftFunction mu;
    VolatilityFunction sigma;
    PiecewiseLossFunction rho = PiecewiseLossFunction::constant(0.0);
    double bound_C = 10.0;
    bool space_homogeneous = false;
};

inline CoefficientSet constant_coefficients(double mu, double sigma, PiecewiseLossFunction rho, double bound_C = 10.0) {
    return {[mu](double, double, double) { return mu; }, [sigma](double, double) { return sigma; }, std::move(rho),
            bound_C, true};
}

inline CoefficientSet constant_coefficients(double mu, double sigma, double rho, double bound_C = 10.0) {
    return constant_coefficients(mu, sigma, PiecewiseLossFunction::constant(rho), bound_C);
}

struct CoefficientValues {
    double mu;
    double sigma;
    double rho;
};

inline CoefficientValues eval_coefficients(const CoefficientSet& c, double t, double x, double loss) {
    if (!std::isfinite(t) || !std::isfinite(x) || !std::isfinite(loss)) {
        throw DomainError("eval_coefficients: non-finite input");
    }
    if (t < 0.0) {
        throw DomainError("eval_coefficients: negative time");
    }
    if (loss < 0.0 || loss > 1.0) {
        throw DomainError("eval_coefficients: loss " + std::to_string(loss) + " outside [0,1]");
    }
    return {c.mu(t, x, loss), c.sigma(t, x), c.rho(t, loss)};
}

// ---------------------------------------------------------------------------
// Validation

struct SampleGrid {
    double horizon = 1.0;  // t in [0, horizon]
    double x_max = 5.0;    // x in [-x_max, x_max]
    std::size_t n_t = 11;
    std::size_t n_x = 41;
    std::size_t n_loss = 201;
};

/// Outcome of one condition. `worst_value` is the most offending sampled
/// statistic and (t, x, loss) is where it occurred.
struct ConditionCheck {
    std::string name;
    bool passed = true;
    double worst_value = 0.0;
    double bound = 0.0;
    double t = 0.0;
    double x = 0.0;
    double loss = 0.0;
};

struct ValidationReport {
    std::vector<ConditionCheck> checks;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const ConditionCheck& c) { return c.passed; });
    }

    const ConditionCheck& at(const std::string& name) const {
        for (const auto& c : checks) {
            if (c.name == name) {
                return c;
            }
        }
        throw std::out_of_range("ValidationReport: no check named " + name);
    }

    std::string summary() const {
        std::string out;
        for (const auto& c : checks) {
            out += c.name + (c.passed ? ": pass" : ": FAIL") + " (worst " + std::to_string(c.worst_value) +
                   ", bound " + std::to_string(c.bound) + " at t=" + std::to_string(c.t) +
                   " x=" + std::to_string(c.x) + " loss=" + std::to_string(c.loss) + ")\n";
        }
        return out;
    }
};

namespace detail {

inline std::vector<double> linspace(double a, double b, std::size_t n) {
    std::vector<double> v(std::max<std::size_t>(n, 1));
    if (v.size() == 1) {
        v[0] = a;
        return v;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(v.size() - 1);
    }
    return v;
}

/// Tracks the maximum of a statistic and where it happened.
struct WorstTracker {
    ConditionCheck check;
    bool any = false;

    // `larger_is_worse` selects max vs min semantics.
    void offer(double value, double t, double x, double loss, bool larger_is_worse = true) {
        const bool worse = !any || (larger_is_worse ? value > check.worst_value : value < check.worst_value);
        if (worse || std::isnan(value)) {
            check.worst_value = value;
            check.t = t;
            check.x = x;
            check.loss = loss;
            any = true;
        }
    }
};

}  // namespace detail

inline constexpr double kDerivativeStep = 1e-4;

/// Checks the standing coefficient assumptions on a sample grid:
/// non-degeneracy, correlation range, C^2 bounds (by central differences),
/// piecewise Lipschitz continuity in loss, and finiteness of the time
/// derivative integral of sigma. Failures are reported, never thrown.
inline ValidationReport validate(const CoefficientSet& c, const SampleGrid& grid) {
    const double C = c.bound_C;
    const double h = kDerivativeStep;
    const auto ts = detail::linspace(0.0, grid.horizon, grid.n_t);
    const auto xs = detail::linspace(-grid.x_max, grid.x_max, grid.n_x);
    const auto ls = detail::linspace(0.0, 1.0, grid.n_loss);

    ValidationReport report;
    {
        ConditionCheck bound_check{"bound_constant", C > 1.0, C, 1.0};
        report.checks.push_back(bound_check);
    }

    detail::WorstTracker sigma_low{{"sigma_nondegenerate"}};
    detail::WorstTracker sigma_bounds{{"sigma_c2_bounds"}};
    detail::WorstTracker sigma_time{{"sigma_time_integral"}};
    for (double t : ts) {
        for (double x : xs) {
            const double s0 = c.sigma(t, x);
            const double sp = c.sigma(t, x + h);
            const double sm = c.sigma(t, x - h);
            sigma_low.offer(s0, t, x, 0.0, false);
            const double d1 = (sp - sm) / (2.0 * h);
            const double d2 = (sp - 2.0 * s0 + sm) / (h * h);
            sigma_bounds.offer(std::max({std::fabs(s0), std::fabs(d1), std::fabs(d2)}), t, x, 0.0);
        }
        // sup_t int_0^x_max |d_t sigma| dy by trapezoid on the x grid
        const double ht = 1e-5;
        double integral = 0.0;
        double prev = 0.0;
        double prev_x = 0.0;
        bool first = true;
        for (double x : xs) {
            if (x < 0.0) {
                continue;
            }
            const double tm = std::max(0.0, t - ht);
            const double dt = std::fabs(c.sigma(t + ht, x) - c.sigma(tm, x)) / (t + ht - tm);
            if (!first) {
                integral += 0.5 * (dt + prev) * (x - prev_x);
            }
            first = false;
            prev = dt;
            prev_x = x;
        }
        sigma_time.offer(integral, t, grid.x_max, 0.0);
    }
    sigma_low.check.bound = 1.0 / C;
    sigma_low.check.passed = sigma_low.check.worst_value >= 1.0 / C;
    sigma_bounds.check.bound = C;
    sigma_bounds.check.passed = sigma_bounds.check.worst_value <= C;
    sigma_time.check.bound = std::numeric_limits<double>::infinity();
    sigma_time.check.passed = std::isfinite(sigma_time.check.worst_value);

    detail::WorstTracker rho_range{{"rho_range"}};
    detail::WorstTracker rho_lip{{"rho_piecewise_lipschitz"}};
    detail::WorstTracker rho_declared{{"rho_declared_lipschitz"}};
    detail::WorstTracker mu_bounds{{"mu_c2_bounds"}};
    detail::WorstTracker mu_lip{{"mu_piecewise_lipschitz"}};
    const double rho_max = 1.0 - 1.0 / C;
    for (double t : ts) {
        for (std::size_t j = 0; j < ls.size(); ++j) {
            const double l = ls[j];
            const double r = c.rho(t, l);
            // distance outside [0, rho_max]; <= 0 means inside
            const double excess = std::max(-r, r - rho_max);
            rho_range.offer(excess, t, 0.0, l);
            if (j > 0 && c.rho.piece_index(ls[j - 1]) == c.rho.piece_index(l)) {
                const double q = std::fabs(r - c.rho(t, ls[j - 1])) / (l - ls[j - 1]);
                rho_lip.offer(q, t, 0.0, l);
                rho_declared.offer(q, t, 0.0, l);
            }
            for (double x : xs) {
                const double m0 = c.mu(t, x, l);
                const double mp = c.mu(t, x + h, l);
                const double mm = c.mu(t, x - h, l);
                const double d1 = (mp - mm) / (2.0 * h);
                const double d2 = (mp - 2.0 * m0 + mm) / (h * h);
                mu_bounds.offer(std::max({std::fabs(m0), std::fabs(d1), std::fabs(d2)}), t, x, l);
                if (j > 0 && c.rho.piece_index(ls[j - 1]) == c.rho.piece_index(l)) {
                    const double q = std::fabs(m0 - c.mu(t, x, ls[j - 1])) / (l - ls[j - 1]);
                    mu_lip.offer(q, t, x, l);
                }
            }
        }
    }
    rho_range.check.passed = rho_range.check.worst_value <= 0.0;
    // report the offending rho value itself rather than the excess
    rho_range.check.worst_value = c.rho(rho_range.check.t, rho_range.check.loss);
    rho_range.check.bound = rho_max;
    rho_lip.check.bound = C;
    rho_lip.check.passed = !rho_lip.any || rho_lip.check.worst_value <= C;
    rho_declared.check.bound = c.rho.lipschitz_bound();
    rho_declared.check.passed = !rho_declared.any || rho_declared.check.worst_value <= c.rho.lipschitz_bound() + 1e-12;
    mu_bounds.check.bound = C;
    mu_bounds.check.passed = mu_bounds.check.worst_value <= C;
    mu_lip.check.bound = C;
    mu_lip.check.passed = !mu_lip.any || mu_lip.check.worst_value <= C;

    for (auto* w : {&sigma_low, &rho_range, &sigma_bounds, &mu_bounds, &rho_lip, &rho_declared, &mu_lip, &sigma_time}) {
        report.checks.push_back(w->check);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Scale transform

/// zeta(t,x) = int_0^x dy / sigma(t,y), by composite Simpson with doubling
/// until the relative change is below 1e-10.
inline double scale_transform(const CoefficientSet& c, double t, double x) {
    if (!std::isfinite(x) || !std::isfinite(t)) {
        throw DomainError("scale_transform: non-finite input");
    }
    return adaptive_simpson([&](double y) { return 1.0 / c.sigma(t, y); }, 0.0, x, 1e-10);
}

/// Central difference of sigma in t, one-sided at t < h.
inline double sigma_time_derivative(const CoefficientSet& c, double t, double x, double h = 1e-5) {
    const double lo = std::max(0.0, t - h);
    return (c.sigma(t + h, x) - c.sigma(lo, x)) / (t + h - lo);
}

inline double default_drift_bound(double bound_C) { return bound_C * bound_C + bound_C + bound_C * bound_C * bound_C; }

/// Drift of Z = zeta(t, X) for a single particle:
///   D = mu/sigma - d_x sigma - int_0^x (d_t sigma / sigma^2)(t,y) dy.
/// Throws NumericError when |D| exceeds `max_abs` (default derived from C).
inline double drift_D(const CoefficientSet& c, double t, double x, double loss, double max_abs = -1.0) {
    const auto v = eval_coefficients(c, t, x, loss);
    const double h = kDerivativeStep;
    const double dsigma_dx = (c.sigma(t, x + h) - c.sigma(t, x - h)) / (2.0 * h);
    const double time_term = adaptive_simpson(
        [&](double y) {
            const double s = c.sigma(t, y);
            return sigma_time_derivative(c, t, y) / (s * s);
        },
        0.0, x, 1e-10);
    const double d = v.mu / v.sigma - dsigma_dx - time_term;
    const double bound = max_abs > 0.0 ? max_abs : default_drift_bound(c.bound_C);
    if (!std::isfinite(d) || std::fabs(d) > bound) {
        throw NumericError("drift_D: |D| = " + std::to_string(d) + " exceeds bound " + std::to_string(bound));
    }
    return d;
}

}  // namespace mvloss
