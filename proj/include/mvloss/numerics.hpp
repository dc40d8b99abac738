#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mvloss/errors.hpp"

namespace mvloss {

inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) noexcept {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

/// Composite Simpson on [a,b], doubling the panel count until two successive
/// estimates differ by less than rel_tol (relative, with an absolute floor).
template <typename F>
double adaptive_simpson(F&& f, double a, double b, double rel_tol = 1e-10, int max_doublings = 22) {
    if (a == b) {
        return 0.0;
    }
    std::size_t n = 2;
    double h = (b - a) / static_cast<double>(n);
    double ends = f(a) + f(b);
    double odd_sum = f(a + h);
    double even_sum = 0.0;
    double previous = h / 3.0 * (ends + 4.0 * odd_sum);
    for (int level = 0; level < max_doublings; ++level) {
        even_sum += odd_sum;
        n *= 2;
        h = (b - a) / static_cast<double>(n);
        odd_sum = 0.0;
        for (std::size_t i = 1; i < n; i += 2) {
            odd_sum += f(a + static_cast<double>(i) * h);
        }
        const double current = h / 3.0 * (ends + 4.0 * odd_sum + 2.0 * even_sum);
        if (!std::isfinite(current)) {
            throw NumericError("adaptive_simpson: non-finite integrand");
        }
        if (std::fabs(current - previous) <= rel_tol * std::max(std::fabs(current), 1e-300) ||
            std::fabs(current - previous) <= 1e-15) {
            return current;
        }
        previous = current;
    }
    throw NumericError("adaptive_simpson: no convergence on [" + std::to_string(a) + ", " + std::to_string(b) + "]");
}

/// Solve a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored. Requires a nonsingular, non-pivoting system
/// (diagonally dominant in practice).
inline void solve_tridiagonal(std::span<const double> lower, std::span<const double> diag,
                              std::span<const double> upper, std::span<double> rhs) {
    const std::size_t n = diag.size();
    if (n == 0) {
        return;
    }
    std::vector<double> c(n);
    double denom = diag[0];
    if (denom == 0.0) {
        throw NumericError("solve_tridiagonal: zero pivot at row 0");
    }
    c[0] = upper[0] / denom;
    rhs[0] /= denom;
    for (std::size_t i = 1; i < n; ++i) {
        denom = diag[i] - lower[i] * c[i - 1];
        if (denom == 0.0 || !std::isfinite(denom)) {
            throw NumericError("solve_tridiagonal: zero pivot at row " + std::to_string(i));
        }
        c[i] = (i + 1 < n) ? upper[i] / denom : 0.0;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for (std::size_t i = n - 1; i-- > 0;) {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Ordinary least squares y = slope*x + intercept.
struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

inline LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) {
        throw DomainError("least_squares: need at least two paired points");
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) {
        throw DomainError("least_squares: abscissae are all equal");
    }
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

}  // namespace mvloss
