#pragma once

// Run configuration: a JSON document, optionally layered over a named
// preset, resolved into model and solver objects. The resolved document is
// what gets written to a run manifest, so re-reading it reproduces the run.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvloss/brownian.hpp"
#include "mvloss/coefficients.hpp"
#include "mvloss/errors.hpp"
#include "mvloss/initial_density.hpp"
#include "mvloss/particles.hpp"
#include "mvloss/pricing.hpp"
#include "mvloss/spde.hpp"

namespace mvloss {

using Json = nlohmann::json;

inline Json preset(const std::string& name) {
    if (name == "constant") {
        return Json::parse(R"({
          "coefficients": {"mu": 0.0, "sigma": 1.0, "rho": 0.0},
          "initial_density": {"type": "truncated_gaussian", "mean": 1.0, "stddev": 0.01},
          "time": {"horizon": 1.0, "n_steps": 1000},
          "solver": {"backend": "kernel", "dx": 0.005, "x_max": 0.0, "adaptive_substeps": true,
                     "mass_tolerance": 1e-9, "snapshots": 101},
          "particles": {"n": 100000, "bridge_correction": true, "histogram_x_max": 10.0, "histogram_bins": 100},
          "pricing": {"m": 100, "payoff": {"type": "terminal_loss"}, "antithetic": false, "theta": 0.0,
                      "self_normalized": false},
          "convergence": {"n_values": [250, 1000, 4000], "seeds_per_n": 10},
          "seed": 1
        })");
    }
    if (name == "figure2") {
        Json j = preset("constant");
        j["coefficients"]["rho"] = {{"thresholds", {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}},
                                    {"values", {0.0, 0.9, 0.0, 0.9, 0.0}}};
        j["initial_density"] = {{"type", "step"}, {"edges", {0.25, 1.25}}, {"heights", {1.0}}};
        j["time"] = {{"horizon", 8.0}, {"n_steps", 400}};
        j["solver"]["dx"] = 0.05;
        j["pricing"]["payoff"] = {{"type", "tranche"}, {"a", 0.1}, {"d", 0.3}};
        return j;
    }
    throw ConfigError("unknown preset '" + name + "' (known: constant, figure2)");
}

namespace detail {

inline const Json& require(const Json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) {
        throw ConfigError("missing required field '" + path + key + "'");
    }
    return j.at(key);
}

template <typename T>
T get(const Json& j, const std::string& key, const std::string& path) {
    const Json& v = require(j, key, path);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("field '" + path + key + "' has the wrong type");
    }
}

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& path) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) {
        return fallback;
    }
    return get<T>(j, key, path);
}

}  // namespace detail

/// rho: a number; the name "figure2-rho"; {"type": "step-rho", "threshold",
/// "low", "high"} for a single jump at the threshold; or
/// {"thresholds": [...], "values": [...]} for a general piecewise-constant
/// correlation in the loss.
inline PiecewiseLossFunction parse_rho(const Json& j) {
    if (j.is_number()) {
        return PiecewiseLossFunction::constant(j.get<double>());
    }
    if (j.is_string()) {
        if (j.get<std::string>() == "figure2-rho") {
            return figure2_rho();
        }
        throw ConfigError("coefficients.rho: unknown built-in '" + j.get<std::string>() + "' (known: figure2-rho)");
    }
    if (!j.is_object()) {
        throw ConfigError("field 'coefficients.rho' must be a number, a built-in name or an object");
    }
    std::vector<double> th, vals;
    const auto type = detail::get_or<std::string>(j, "type", "piecewise", "coefficients.rho.");
    if (type == "figure2-rho") {
        return figure2_rho();
    } else if (type == "step-rho") {
        th = {0.0, detail::get<double>(j, "threshold", "coefficients.rho."), 1.0};
        vals = {detail::get<double>(j, "low", "coefficients.rho."), detail::get<double>(j, "high", "coefficients.rho.")};
    } else if (type == "piecewise") {
        th = detail::get<std::vector<double>>(j, "thresholds", "coefficients.rho.");
        vals = detail::get<std::vector<double>>(j, "values", "coefficients.rho.");
    } else {
        throw ConfigError("coefficients.rho.type '" + type + "' is not one of piecewise, step-rho, figure2-rho");
    }
    try {
        return PiecewiseLossFunction::piecewise_constant(std::move(th), std::move(vals));
    } catch (const DomainError& e) {
        throw ConfigError(std::string("coefficients.rho: ") + e.what());
    }
}

/// mu(t, x, l) = a + b * l + c * x, given as a number a or {"a","b","c"}.
/// sigma(t, x) = a + b * x, given as a number a or {"a","b"}.
inline CoefficientSet parse_coefficients(const Json& j) {
    const std::string p = "coefficients.";
    if (!j.is_object()) {
        throw ConfigError("missing required field 'coefficients'");
    }
    const Json& mu_j = detail::require(j, "mu", p);
    const Json& sigma_j = detail::require(j, "sigma", p);
    const Json& rho_j = detail::require(j, "rho", p);
    double mu_a = 0, mu_b = 0, mu_c = 0, s_a = 0, s_b = 0;
    if (mu_j.is_number()) {
        mu_a = mu_j.get<double>();
    } else {
        mu_a = detail::get_or(mu_j, "a", 0.0, p + "mu.");
        mu_b = detail::get_or(mu_j, "b", 0.0, p + "mu.");
        mu_c = detail::get_or(mu_j, "c", 0.0, p + "mu.");
    }
    if (sigma_j.is_number()) {
        s_a = sigma_j.get<double>();
    } else {
        s_a = detail::get<double>(sigma_j, "a", p + "sigma.");
        s_b = detail::get_or(sigma_j, "b", 0.0, p + "sigma.");
    }
    CoefficientSet c;
    c.mu = [=](double, double x, double l) { return mu_a + mu_b * l + mu_c * x; };
    c.sigma = [=](double, double x) { return s_a + s_b * x; };
    c.rho = parse_rho(rho_j);
    c.bound_C = detail::get_or(j, "bound_C", 10.0, p);
    c.space_homogeneous = mu_c == 0.0 && s_b == 0.0;
    return c;
}

inline InitialDensity parse_initial_density(const Json& j) {
    const std::string p = "initial_density.";
    const auto type = detail::get<std::string>(j, "type", p);
    try {
        if (type == "truncated_gaussian") {
            return InitialDensity::truncated_gaussian(detail::get<double>(j, "mean", p), detail::get<double>(j, "stddev", p));
        }
        if (type == "step") {
            return InitialDensity::step(detail::get<std::vector<double>>(j, "edges", p),
                                        detail::get<std::vector<double>>(j, "heights", p));
        }
        if (type == "grid") {
            return InitialDensity::grid(detail::get<std::vector<double>>(j, "xs", p),
                                        detail::get<std::vector<double>>(j, "values", p));
        }
    } catch (const DomainError& e) {
        throw ConfigError(std::string("initial_density: ") + e.what());
    }
    throw ConfigError("initial_density.type '" + type + "' is not one of truncated_gaussian, step, grid");
}

inline LossPayoff parse_payoff(const Json& j) {
    const std::string p = "pricing.payoff.";
    const auto type = detail::get<std::string>(j, "type", p);
    try {
        if (type == "terminal_loss") {
            return LossPayoff::terminal_loss();
        }
        if (type == "tranche") {
            return LossPayoff::tranche(detail::get<double>(j, "a", p), detail::get<double>(j, "d", p));
        }
        if (type == "indicator") {
            return LossPayoff::indicator(detail::get<double>(j, "threshold", p));
        }
        if (type == "constant") {
            return LossPayoff::constant(detail::get_or(j, "value", 1.0, p));
        }
    } catch (const DomainError& e) {
        throw ConfigError(std::string("pricing.payoff: ") + e.what());
    }
    throw ConfigError("pricing.payoff.type '" + type + "' is not one of terminal_loss, tranche, indicator, constant");
}

struct RunConfig {
    Json document;  // fully resolved
    CoefficientSet coefficients;
    InitialDensity initial_density = InitialDensity::truncated_gaussian(1.0, 0.1);
    TimeGrid grid{1.0, 1};
    SolverConfig solver;
    std::size_t snapshots = 0;
    std::size_t n_particles = 0;
    ParticleOptions particles;
    std::size_t m = 0;
    LossPayoff payoff = LossPayoff::terminal_loss();
    bool antithetic = false;
    double theta = 0.0;
    bool self_normalized = false;
    std::vector<std::size_t> convergence_n;
    std::size_t seeds_per_n = 0;
    std::uint64_t seed = 0;
};

/// Resolves a document: if it names a "preset", the preset is the base and
/// the document's own fields are merged over it.
inline RunConfig resolve_config(Json doc) {
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    if (doc.contains("preset")) {
        Json base = preset(detail::get<std::string>(doc, "preset", ""));
        Json overrides = doc;
        overrides.erase("preset");
        base.merge_patch(overrides);
        doc = std::move(base);
    }

    RunConfig rc;
    rc.coefficients = parse_coefficients(detail::require(doc, "coefficients", ""));
    rc.initial_density = parse_initial_density(detail::require(doc, "initial_density", ""));

    const Json& time = detail::require(doc, "time", "");
    try {
        rc.grid = TimeGrid(detail::get<double>(time, "horizon", "time."), detail::get<std::size_t>(time, "n_steps", "time."));
    } catch (const DomainError& e) {
        throw ConfigError(std::string("time: ") + e.what());
    }

    const Json solver = doc.value("solver", Json::object());
    const auto backend = detail::get_or<std::string>(solver, "backend", "kernel", "solver.");
    if (backend != "kernel" && backend != "fd") {
        throw ConfigError("solver.backend must be 'kernel' or 'fd'");
    }
    rc.solver.backend = backend == "kernel" ? Backend::kernel : Backend::fd;
    rc.solver.grid = rc.grid;
    rc.solver.dx = detail::get_or(solver, "dx", 5e-3, "solver.");
    rc.solver.x_max = detail::get_or(solver, "x_max", 0.0, "solver.");
    rc.solver.adaptive_substeps = detail::get_or(solver, "adaptive_substeps", true, "solver.");
    rc.solver.mass_tolerance = detail::get_or(solver, "mass_tolerance", 1e-9, "solver.");
    rc.snapshots = detail::get_or<std::size_t>(solver, "snapshots", 11, "solver.");
    if (rc.solver.backend == Backend::kernel && !rc.coefficients.space_homogeneous) {
        throw ConfigError("solver.backend 'kernel' needs mu and sigma constant in x; use 'fd'");
    }

    const Json particles = doc.value("particles", Json::object());
    rc.n_particles = detail::get_or<std::size_t>(particles, "n", 10000, "particles.");
    rc.particles.bridge_correction = detail::get_or(particles, "bridge_correction", true, "particles.");
    rc.particles.histogram_x_max = detail::get_or(particles, "histogram_x_max", 10.0, "particles.");
    rc.particles.histogram_bins = detail::get_or<std::size_t>(particles, "histogram_bins", 100, "particles.");

    const Json pricing = doc.value("pricing", Json::object());
    rc.m = detail::get_or<std::size_t>(pricing, "m", 100, "pricing.");
    rc.payoff = parse_payoff(pricing.value("payoff", Json{{"type", "terminal_loss"}}));
    rc.antithetic = detail::get_or(pricing, "antithetic", false, "pricing.");
    rc.theta = detail::get_or(pricing, "theta", 0.0, "pricing.");
    rc.self_normalized = detail::get_or(pricing, "self_normalized", false, "pricing.");

    const Json conv = doc.value("convergence", Json::object());
    rc.convergence_n = detail::get_or<std::vector<std::size_t>>(conv, "n_values", {250, 1000, 4000}, "convergence.");
    rc.seeds_per_n = detail::get_or<std::size_t>(conv, "seeds_per_n", 10, "convergence.");

    rc.seed = detail::get_or<std::uint64_t>(doc, "seed", 1, "");
    rc.document = std::move(doc);
    return rc;
}

inline Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

}  // namespace mvloss
