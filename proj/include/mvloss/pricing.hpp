#pragma once

// Monte Carlo estimation of E[Psi(L)] over systemic Brownian paths, each
// path solved with the SPDE solver.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "mvloss/brownian.hpp"
#include "mvloss/errors.hpp"
#include "mvloss/loss_path.hpp"
#include "mvloss/parallel.hpp"
#include "mvloss/rng.hpp"
#include "mvloss/spde.hpp"

namespace mvloss {

class LossPayoff {
public:
    enum class Kind { terminal_loss, tranche, indicator, constant, custom };

    static LossPayoff terminal_loss() { return LossPayoff(Kind::terminal_loss); }

    /// min(max(L_T - a, 0), d - a) / (d - a).
    static LossPayoff tranche(double a, double d) {
        if (!(a >= 0.0 && a < d && d <= 1.0)) {
            throw DomainError("tranche: need 0 <= a < d <= 1");
        }
        LossPayoff p(Kind::tranche);
        p.attachment_ = a;
        p.detachment_ = d;
        return p;
    }

    /// 1{L_T > threshold}.
    static LossPayoff indicator(double threshold) {
        LossPayoff p(Kind::indicator);
        p.threshold_ = threshold;
        return p;
    }

    static LossPayoff constant(double value) {
        LossPayoff p(Kind::constant);
        p.constant_ = value;
        return p;
    }

    static LossPayoff custom(std::string name, std::function<double(const LossPath&)> f) {
        LossPayoff p(Kind::custom);
        p.name_ = std::move(name);
        p.custom_ = std::move(f);
        return p;
    }

    Kind kind() const noexcept { return kind_; }
    double attachment() const noexcept { return attachment_; }
    double detachment() const noexcept { return detachment_; }
    double threshold() const noexcept { return threshold_; }
    double constant_value() const noexcept { return constant_; }

    double operator()(const LossPath& loss) const {
        const double lt = loss.terminal();
        switch (kind_) {
            case Kind::terminal_loss:
                return lt;
            case Kind::tranche:
                return std::min(std::max(lt - attachment_, 0.0), detachment_ - attachment_) /
                       (detachment_ - attachment_);
            case Kind::indicator:
                return lt > threshold_ ? 1.0 : 0.0;
            case Kind::constant:
                return constant_;
            case Kind::custom:
                return custom_(loss);
        }
        return 0.0;
    }

    std::string descriptor() const {
        char buf[96];
        switch (kind_) {
            case Kind::terminal_loss:
                return "terminal_loss";
            case Kind::tranche:
                std::snprintf(buf, sizeof buf, "tranche[%.6g;%.6g]", attachment_, detachment_);
                return buf;
            case Kind::indicator:
                std::snprintf(buf, sizeof buf, "indicator[%.6g]", threshold_);
                return buf;
            case Kind::constant:
                std::snprintf(buf, sizeof buf, "constant[%.6g]", constant_);
                return buf;
            case Kind::custom:
                return "custom[" + name_ + "]";
        }
        return "unknown";
    }

private:
    explicit LossPayoff(Kind k) : kind_(k) {}

    Kind kind_;
    double attachment_ = 0.0;
    double detachment_ = 1.0;
    double threshold_ = 0.0;
    double constant_ = 1.0;
    std::string name_;
    std::function<double(const LossPath&)> custom_;
};

inline LossPayoff tranche_payoff(double a, double d) { return LossPayoff::tranche(a, d); }

struct PathSample {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool antithetic = false;
    double value = 0.0;
    double weight = 1.0;
};

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t m = 0;
    double delta = 0.0;
    bool antithetic = false;
    bool is_weights_used = false;
    double theta = 0.0;
    std::uint64_t seed = 0;
    std::string payoff;
    std::vector<PathSample> samples;
};

struct PricingOptions {
    bool antithetic = false;
    double theta = 0.0;
    bool self_normalized = false;
    unsigned threads = 1;
};

namespace detail {

inline double sample_stddev(const std::vector<double>& y) {
    const auto n = static_cast<double>(y.size());
    if (y.size() < 2) {
        return 0.0;
    }
    double mean = 0.0;
    for (double v : y) {
        mean += v;
    }
    mean /= n;
    double ss = 0.0;
    for (double v : y) {
        ss += (v - mean) * (v - mean);
    }
    return std::sqrt(ss / (n - 1.0));
}

/// exp(-theta w_T - theta^2 T / 2) for the untilted terminal value w_T.
inline double likelihood_ratio(double theta, double w_terminal, double horizon) {
    const double exponent = -theta * w_terminal - 0.5 * theta * theta * horizon;
    if (!(std::fabs(exponent) < 700.0)) {
        throw NumericError("price_tilted: likelihood-ratio exponent " + std::to_string(exponent) +
                           " out of range; use a smaller |theta|");
    }
    return std::exp(exponent);
}

}  // namespace detail

/// E_{m,delta} = (1/m) sum_i Psi(L~_{w^i}) with optional antithetic pairing
/// (w, -w) and a Girsanov drift tilt of the systemic path: the SPDE is solved
/// along w + theta t and each sample weighted by exp(-theta w_T - theta^2 T/2).
/// Path i (or pair i) uses systemic seed derive_seed(seed, i), stream 0.
inline McEstimate estimate(const LossPayoff& payoff, std::size_t m, const SolverConfig& cfg, const CoefficientSet& c,
                           const InitialDensity& nu0, std::uint64_t seed, const PricingOptions& opt = {}) {
    if (m < 2) {
        throw DomainError("price: need m >= 2");
    }
    if (opt.antithetic && m % 2 != 0) {
        throw DomainError("price: antithetic pricing needs an even m");
    }
    if (!std::isfinite(opt.theta)) {
        throw DomainError("price_tilted: theta must be finite");
    }
    const SpdeSolver solver(cfg, c, nu0);
    const TimeGrid& grid = cfg.grid;
    const std::size_t draws = opt.antithetic ? m / 2 : m;
    const bool tilted = opt.theta != 0.0;

    std::vector<PathSample> samples(m);
    parallel_for(draws, opt.threads, [&](std::size_t i) {
        const std::uint64_t path_seed = derive_seed(seed, i);
        const BrownianPath base = sample(grid, path_seed, 0);
        const std::size_t copies = opt.antithetic ? 2 : 1;
        for (std::size_t a = 0; a < copies; ++a) {
            const BrownianPath w = a == 0 ? base : negate(base);
            const std::size_t slot = opt.antithetic ? 2 * i + a : i;
            PathSample& s = samples[slot];
            s.index = slot;
            s.seed = path_seed;
            s.antithetic = a == 1;
            try {
                if (tilted) {
                    s.weight = detail::likelihood_ratio(opt.theta, w.terminal(), grid.horizon());
                    s.value = payoff(solver.solve(with_drift(w, opt.theta)).loss);
                } else {
                    s.value = payoff(solver.solve(w).loss);
                }
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " [path " + std::to_string(slot) + ", seed " +
                                   std::to_string(path_seed) + "]");
            }
        }
    });

    McEstimate est;
    est.m = m;
    est.delta = grid.delta();
    est.antithetic = opt.antithetic;
    est.is_weights_used = tilted;
    est.theta = opt.theta;
    est.seed = seed;
    est.payoff = payoff.descriptor();

    if (tilted && opt.self_normalized) {
        double sw = 0.0, swy = 0.0;
        for (const auto& s : samples) {
            sw += s.weight;
            swy += s.weight * s.value;
        }
        est.mean = swy / sw;
        // delta-method standard error of the ratio estimator
        double num = 0.0;
        for (const auto& s : samples) {
            num += s.weight * s.weight * (s.value - est.mean) * (s.value - est.mean);
        }
        est.std_error = std::sqrt(num) / sw;
    } else {
        std::vector<double> y;
        y.reserve(draws);
        double total = 0.0;
        for (const auto& s : samples) {
            total += s.value * s.weight;
        }
        est.mean = total / static_cast<double>(m);
        if (opt.antithetic) {
            for (std::size_t i = 0; i < draws; ++i) {
                y.push_back(0.5 * (samples[2 * i].value * samples[2 * i].weight +
                                   samples[2 * i + 1].value * samples[2 * i + 1].weight));
            }
        } else {
            for (const auto& s : samples) {
                y.push_back(s.value * s.weight);
            }
        }
        est.std_error = detail::sample_stddev(y) / std::sqrt(static_cast<double>(draws));
    }
    est.samples = std::move(samples);
    return est;
}

inline McEstimate price(const LossPayoff& payoff, std::size_t m, const SolverConfig& cfg, const CoefficientSet& c,
                        const InitialDensity& nu0, std::uint64_t seed, bool antithetic, unsigned threads = 1) {
    return estimate(payoff, m, cfg, c, nu0, seed, {antithetic, 0.0, false, threads});
}

inline McEstimate price_tilted(const LossPayoff& payoff, std::size_t m, const SolverConfig& cfg,
                               const CoefficientSet& c, const InitialDensity& nu0, std::uint64_t seed, double theta,
                               bool self_normalized = false, unsigned threads = 1) {
    return estimate(payoff, m, cfg, c, nu0, seed, {false, theta, self_normalized, threads});
}

inline void write_estimate_csv(std::ostream& os, const McEstimate& e, bool header = true) {
    if (header) {
        os << "payoff,m,delta,mean,std_error,antithetic,theta,seed\n";
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g,%d,%.17g,%llu\n", e.payoff.c_str(), e.m, e.delta, e.mean,
                  e.std_error, e.antithetic ? 1 : 0, e.theta, static_cast<unsigned long long>(e.seed));
    os << buf;
}

inline void write_samples_csv(std::ostream& os, const McEstimate& e) {
    os << "index,seed,antithetic,value,weight\n";
    char buf[160];
    for (const auto& s : e.samples) {
        std::snprintf(buf, sizeof buf, "%zu,%llu,%d,%.17g,%.17g\n", s.index, static_cast<unsigned long long>(s.seed),
                      s.antithetic ? 1 : 0, s.value, s.weight);
        os << buf;
    }
}

}  // namespace mvloss
