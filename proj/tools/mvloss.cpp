// mvloss: command-line driver for particle runs, SPDE solves, Monte Carlo
// pricing, convergence studies and diagnostics of saved runs.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvloss/config.hpp"
#include "mvloss/diagnostics.hpp"
#include "mvloss/particles.hpp"
#include "mvloss/pricing.hpp"
#include "mvloss/spde.hpp"

namespace fs = std::filesystem;
using namespace mvloss;

namespace {

constexpr const char* kFormatVersion = "mvloss-run/1";

struct Overrides {
    std::string config_path;
    std::string preset_name;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n;
    std::optional<std::size_t> m;
    std::optional<double> delta;
    std::optional<double> dx;
    std::optional<std::string> backend;
    bool antithetic = false;
    std::optional<double> theta;
    unsigned threads = default_thread_count();
    std::string out = "run";
};

/// Builds the run document: file (or preset) plus command-line overrides.
Json build_document(const Overrides& o) {
    Json doc;
    if (!o.config_path.empty()) {
        doc = load_json_file(o.config_path);
    } else if (!o.preset_name.empty()) {
        doc = Json{{"preset", o.preset_name}};
    } else {
        throw ConfigError("give --config <file> or --preset <name>");
    }
    if (doc.contains("preset")) {
        Json base = preset(doc.at("preset").get<std::string>());
        doc.erase("preset");
        base.merge_patch(doc);
        doc = std::move(base);
    }
    if (o.seed) {
        doc["seed"] = *o.seed;
    }
    if (o.n) {
        doc["particles"]["n"] = *o.n;
    }
    if (o.m) {
        doc["pricing"]["m"] = *o.m;
    }
    if (o.antithetic) {
        doc["pricing"]["antithetic"] = true;
    }
    if (o.theta) {
        doc["pricing"]["theta"] = *o.theta;
    }
    if (o.dx) {
        doc["solver"]["dx"] = *o.dx;
    }
    if (o.backend) {
        doc["solver"]["backend"] = *o.backend;
    }
    if (o.delta) {
        if (!doc.contains("time") || !doc["time"].contains("horizon")) {
            throw ConfigError("--delta needs time.horizon in the config");
        }
        const double horizon = doc["time"]["horizon"].get<double>();
        const double steps = std::round(horizon / *o.delta);
        if (!(*o.delta > 0.0) || steps < 1.0) {
            throw ConfigError("--delta must be positive and at most time.horizon");
        }
        doc["time"]["n_steps"] = static_cast<std::size_t>(steps);
    }
    return doc;
}

void require_valid_coefficients(const RunConfig& rc) {
    SampleGrid g;
    g.horizon = rc.grid.horizon();
    const ValidationReport rep = validate(rc.coefficients, g);
    if (!rep.passed()) {
        throw ConfigError("coefficient validation failed:\n" + rep.summary());
    }
}

class RunDirectory {
public:
    RunDirectory(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
        fs::create_directories(dir_);
    }

    std::ofstream open(const std::string& name) {
        artifacts_.push_back(name);
        const fs::path p = dir_ / name;
        fs::create_directories(p.parent_path());
        std::ofstream os(p, std::ios::binary);
        if (!os) {
            throw ConfigError("cannot write " + p.string());
        }
        return os;
    }

    void write_manifest(const Json& config, const Json& extra = Json::object()) {
        Json manifest{{"format", kFormatVersion}, {"command", command_}, {"config", config}, {"artifacts", artifacts_}};
        for (const auto& [k, v] : extra.items()) {
            manifest[k] = v;
        }
        std::ofstream os(dir_ / "manifest.json", std::ios::binary);
        os << manifest.dump(2) << '\n';
    }

private:
    fs::path dir_;
    std::string command_;
    std::vector<std::string> artifacts_;
};

std::vector<double> snapshot_times(const RunConfig& rc) {
    const std::size_t count = std::max<std::size_t>(rc.snapshots, 2);
    std::vector<double> ts(count);
    for (std::size_t i = 0; i < count; ++i) {
        ts[i] = rc.grid.horizon() * static_cast<double>(i) / static_cast<double>(count - 1);
    }
    return ts;
}

/// The systemic path of a single-path run: stream 0 of the run seed.
BrownianPath systemic_path(const RunConfig& rc) { return sample(rc.grid, rc.seed, 0); }

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

int run_simulate(const Overrides& o) {
    const RunConfig rc = resolve_config(build_document(o));
    require_valid_coefficients(rc);
    RunDirectory out(o.out, "simulate");
    const BrownianPath w = systemic_path(rc);
    const auto times = snapshot_times(rc);
    const ParticleRun run = simulate(rc.initial_density, rc.coefficients, rc.n_particles, w, rc.seed, times, rc.particles);

    {
        auto os = out.open("loss.csv");
        write_loss_csv(os, run.loss);
    }
    {
        auto os = out.open("systemic_path.csv");
        write_path_csv(os, w);
    }
    for (std::size_t i = 0; i < run.snapshots.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "snapshots/snapshot_%04zu.csv", i);
        auto os = out.open(name);
        write_snapshot_csv(os, run.snapshots[i]);
    }
    out.write_manifest(rc.document, Json{{"n_particles", rc.n_particles}, {"snapshot_times", times}});
    std::cout << "simulate,L_T=" << format_double(run.loss.terminal()) << ",N=" << rc.n_particles << '\n';
    return 0;
}

int run_solve(const Overrides& o) {
    const RunConfig rc = resolve_config(build_document(o));
    require_valid_coefficients(rc);
    RunDirectory out(o.out, "solve");
    const BrownianPath w = systemic_path(rc);
    const SpdeSolver solver(rc.solver, rc.coefficients, rc.initial_density);
    const auto times = snapshot_times(rc);
    const SolveResult res = solver.solve(w, times);

    {
        auto os = out.open("loss.csv");
        write_loss_csv(os, res.loss);
    }
    {
        auto os = out.open("systemic_path.csv");
        write_path_csv(os, w);
    }
    {
        auto os = out.open("heatmap.txt");
        write_heatmap(os, res.snapshots);
    }
    out.write_manifest(rc.document, Json{{"x_max", solver.config().x_max},
                                         {"backend", backend_name(solver.config().backend)},
                                         {"monotone_clamps", res.monotone_clamps}});
    std::cout << "solve,L_T=" << format_double(res.loss.terminal()) << ",backend=" << backend_name(rc.solver.backend)
              << '\n';
    return 0;
}

int run_price(const Overrides& o) {
    const RunConfig rc = resolve_config(build_document(o));
    require_valid_coefficients(rc);
    RunDirectory out(o.out, "price");
    PricingOptions opt{rc.antithetic, rc.theta, rc.self_normalized, o.threads};
    const McEstimate est = estimate(rc.payoff, rc.m, rc.solver, rc.coefficients, rc.initial_density, rc.seed, opt);
    {
        auto os = out.open("estimate.csv");
        write_estimate_csv(os, est);
    }
    {
        auto os = out.open("samples.csv");
        write_samples_csv(os, est);
    }
    out.write_manifest(rc.document);
    write_estimate_csv(std::cout, est, false);
    return 0;
}

int run_converge(const Overrides& o) {
    const RunConfig rc = resolve_config(build_document(o));
    require_valid_coefficients(rc);
    RunDirectory out(o.out, "converge");
    const BrownianPath w = systemic_path(rc);
    const ConvergenceReport rep = convergence_study(rc.convergence_n, w, rc.coefficients, rc.initial_density, rc.solver,
                                                    rc.seeds_per_n, rc.seed, o.threads, rc.particles);
    {
        auto os = out.open("convergence.csv");
        write_convergence_csv(os, rep);
    }
    {
        auto os = out.open("spde_loss.csv");
        write_loss_csv(os, rep.spde_loss);
    }
    out.write_manifest(rc.document, Json{{"slope", rep.fit.slope},
                                         {"strictly_decreasing_seeds", rep.strictly_decreasing_count()}});
    std::cout << "converge,slope=" << format_double(rep.fit.slope) << ",strictly_decreasing="
              << rep.strictly_decreasing_count() << '/' << rc.seeds_per_n << '\n';
    return 0;
}

/// Re-reads a run directory and writes regularity / conservation reports.
int run_diagnose(const std::string& dir_name) {
    const fs::path dir(dir_name);
    const Json manifest = load_json_file((dir / "manifest.json").string());
    const std::string command = manifest.value("command", "");
    std::ifstream loss_in(dir / "loss.csv");
    if (!loss_in) {
        throw ConfigError("run directory has no loss.csv: " + dir.string());
    }
    const LossPath loss = read_loss_csv(loss_in);

    std::vector<DiagnosticRow> rows;
    if (command == "solve") {
        std::ifstream heat_in(dir / "heatmap.txt");
        const auto snaps = read_heatmap(heat_in);
        RegularityOptions opt;
        const RunConfig rc = resolve_config(manifest.at("config"));
        opt.sigma_typ = std::fabs(rc.coefficients.sigma(0.0, 0.0));
        const RegularityReport rep = check_regularity(loss, snaps, opt);
        rows = rep.rows;
        double worst = 0.0;
        for (const auto& s : snaps) {
            worst = std::max(worst, std::fabs(total_mass(s) + loss.at(s.time) - 1.0));
        }
        rows.push_back({"mass_plus_loss", worst, 1e-6, worst <= 1e-6});
        bool boundary_zero = true, nonnegative = true;
        for (const auto& s : snaps) {
            boundary_zero = boundary_zero && s.values.front() == 0.0;
            for (double v : s.values) {
                nonnegative = nonnegative && v >= 0.0;
            }
        }
        rows.push_back({"dirichlet_boundary", boundary_zero ? 0.0 : 1.0, 0.0, boundary_zero});
        rows.push_back({"density_nonnegative", nonnegative ? 0.0 : 1.0, 0.0, nonnegative});
    } else if (command == "simulate") {
        const auto violations = loss.monotonicity_violations();
        rows.push_back({"loss_monotone", static_cast<double>(violations), 0.0, violations == 0});
        bool in_range = true;
        for (double v : loss.values) {
            in_range = in_range && v >= 0.0 && v <= 1.0;
        }
        rows.push_back({"loss_in_unit_interval", in_range ? 0.0 : 1.0, 0.0, in_range});
    } else {
        throw ConfigError("diagnose supports runs made by 'solve' or 'simulate', not '" + command + "'");
    }

    {
        std::ofstream os(dir / "report.csv", std::ios::binary);
        write_report_csv(os, rows);
    }
    {
        std::ofstream os(dir / "report.txt", std::ios::binary);
        write_report_text(os, rows);
    }
    write_report_text(std::cout, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Large-portfolio loss model: particle system, limit SPDE and Monte Carlo pricing"};
    app.require_subcommand(1);
    Overrides o;

    auto add_common = [&](CLI::App* sub) {
        auto* source = sub->add_option_group("source");
        source->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
        source->add_option("--preset", o.preset_name, "built-in configuration (constant, figure2)");
        source->require_option(1);
        sub->add_option("--seed", o.seed, "64-bit master seed");
        sub->add_option("--threads", o.threads, "worker threads for path-level work")->check(CLI::PositiveNumber);
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--delta", o.delta, "time step (sets time.n_steps = T / delta)");
        sub->add_option("--dx", o.dx, "spatial step of the SPDE grid");
        sub->add_option("--backend", o.backend, "SPDE backend")->check(CLI::IsMember({"kernel", "fd"}));
    };

    auto* simulate_cmd = app.add_subcommand("simulate", "particle system along one systemic path");
    add_common(simulate_cmd);
    simulate_cmd->add_option("--n", o.n, "number of particles");

    auto* solve_cmd = app.add_subcommand("solve", "limit SPDE along one systemic path");
    add_common(solve_cmd);

    auto* price_cmd = app.add_subcommand("price", "Monte Carlo estimate of E[payoff(L)]");
    add_common(price_cmd);
    price_cmd->add_option("--m", o.m, "number of systemic paths");
    price_cmd->add_flag("--antithetic", o.antithetic, "pair each path w with -w");
    price_cmd->add_option("--theta", o.theta, "Girsanov drift tilt of the systemic path");

    auto* converge_cmd = app.add_subcommand("converge", "particle-to-SPDE distance for several N");
    add_common(converge_cmd);

    std::string run_dir;
    auto* diagnose_cmd = app.add_subcommand("diagnose", "regularity and conservation checks on a saved run");
    diagnose_cmd->add_option("run_dir", run_dir, "directory written by solve or simulate")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*simulate_cmd) {
            return run_simulate(o);
        }
        if (*solve_cmd) {
            return run_solve(o);
        }
        if (*price_cmd) {
            return run_price(o);
        }
        if (*converge_cmd) {
            return run_converge(o);
        }
        if (*diagnose_cmd) {
            return run_diagnose(run_dir);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << '\n';
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: io: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
