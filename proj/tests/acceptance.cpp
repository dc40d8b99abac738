// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Reference values come from the oracles in oracles.hpp or
// from closed-form expressions written out below, never from the library.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mvloss/config.hpp"
#include "mvloss/diagnostics.hpp"
#include "mvloss/parallel.hpp"
#include "mvloss/particles.hpp"
#include "mvloss/pricing.hpp"
#include "mvloss/spde.hpp"
#include "oracles.hpp"

using namespace mvloss;
namespace fs = std::filesystem;

namespace {

int failures = 0;
const unsigned kThreads = default_thread_count();

void report(int id, bool pass, const std::string& what, const std::string& detail) {
    std::printf("criterion %2d: %s  %s  (%s)\n", id, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += pass ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Conservation and monotonicity audit over every run made below.
struct Audit {
    std::size_t runs = 0;
    std::size_t monotone_violations = 0;
    std::size_t mass_violations = 0;
    double worst_mass_gap = 0.0;

    void spde(const SolveResult& r) {
        ++runs;
        monotone_violations += r.loss.monotonicity_violations();
        for (const auto& s : r.snapshots) {
            const double gap = std::fabs(total_mass(s) + r.loss.at(s.time) - 1.0);
            worst_mass_gap = std::max(worst_mass_gap, gap);
            mass_violations += gap > 1e-6 ? 1 : 0;
        }
    }

    void particles(const ParticleRun& r) {
        ++runs;
        monotone_violations += r.loss.monotonicity_violations();
        for (const auto& s : r.snapshots) {
            std::size_t alive = 0;
            for (auto c : s.counts) {
                alive += c;
            }
            // exact: both sides are multiples of 1/N
            const double l = r.loss.values[r.loss.grid.nearest_index(s.time)];
            mass_violations += alive + static_cast<std::size_t>(std::llround(l * static_cast<double>(s.n))) != s.n;
        }
    }
};
Audit audit;

const double kReflection = 2.0 * oracle::phi(-1.0);  // P(min_{[0,1]} (1 + B) <= 0)

// -------------------------------------------------------------------------

void hitting_law_spde() {
    const auto rc = resolve_config(preset("constant"));
    SolverConfig cfg = rc.solver;
    cfg.snapshot_stride = 10;
    const auto t0 = std::chrono::steady_clock::now();
    const SolveResult r = solve(cfg, rc.coefficients, rc.initial_density, sample(rc.grid, 1, 0));
    const double secs = seconds_since(t0);
    audit.spde(r);
    const double gap = std::fabs(r.loss.terminal() - kReflection);
    report(1, gap <= 1e-2 && secs < 10.0, "SPDE terminal loss vs 2*Phi(-1)",
           fmt("L=%.6f oracle=%.6f gap=%.2e tol=1e-2, %.2fs < 10s", r.loss.terminal(), kReflection, gap, secs));

    // boundary decay on the same run
    const auto reg = check_regularity(r.loss, r.snapshots);
    const auto& slope = reg.at("boundary_decay_slope");
    const auto& r2 = reg.at("boundary_decay_r2");
    report(7, slope.passed && r2.passed, "boundary mass decay on the constant-coefficient run",
           fmt("slope=%.3f >= 1.0, r2=%.5f >= 0.95", slope.statistic, r2.statistic));
}

void hitting_law_particles() {
    const auto rc = resolve_config(preset("constant"));
    const std::size_t n = 100000;
    const std::vector<double> times{0.25, 0.5, 0.75, 1.0};
    const auto t0 = std::chrono::steady_clock::now();
    const ParticleRun run = simulate(rc.initial_density, rc.coefficients, n, sample(rc.grid, 1, 0), 1, times);
    const double secs = seconds_since(t0);
    audit.particles(run);
    const double p = kReflection;
    const double tol = 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)) + 2e-3;
    const double gap = std::fabs(run.loss.terminal() - p);
    report(2, gap <= tol && secs < 60.0, "particle terminal loss vs 2*Phi(-1), N=1e5",
           fmt("L=%.6f gap=%.2e tol=%.2e, %.1fs < 60s", run.loss.terminal(), gap, tol, secs));
}

void backend_equivalence() {
    std::mt19937_64 gen(20240601);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal;
    const double x_max = 8.0;
    int good = 0;
    double worst = 1e300, sum_coarse = 0.0, sum_fine = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        const double mu = -0.5 + unit(gen), sigma = 0.5 + unit(gen), rho = 0.9 * unit(gen);
        const double c1 = 1.0 + 3.0 * unit(gen), c2 = 2.0 + 3.0 * unit(gen);
        const double w1 = 0.3 + 0.5 * unit(gen), w2 = 0.3 + 0.5 * unit(gen), a2 = unit(gen);
        const double z = normal(gen);
        const auto c = constant_coefficients(mu, sigma, rho);
        auto gap = [&](double dx, double delta) {
            auto v = DensityGrid::zeros(x_max, static_cast<std::size_t>(std::lround(x_max / dx)));
            for (std::size_t j = 1; j <= v.m; ++j) {
                const double x = v.x(j);
                v.values[j] = (std::exp(-0.5 * std::pow((x - c1) / w1, 2)) +
                               a2 * std::exp(-0.5 * std::pow((x - c2) / w2, 2))) *
                              (1.0 - std::exp(-4.0 * x));
            }
            const double dw = z * std::sqrt(delta);
            const auto a = step_fd(v, c, 0.0, delta, dw, 0.0);
            const auto b = step_kernel(v, c, 0.0, delta, dw, 0.0);
            double l1 = 0.0;
            for (std::size_t j = 0; j <= v.m; ++j) {
                l1 += std::fabs(a.values[j] - b.values[j]) * dx;
            }
            return l1;
        };
        const double coarse = gap(0.02, 0.01), fine = gap(0.01, 0.005);
        sum_coarse += coarse;
        sum_fine += fine;
        worst = std::min(worst, coarse / fine);
        good += coarse / fine >= 1.8 ? 1 : 0;
    }
    report(3, good == 20, "FD vs kernel one-step L1 gap under (delta, dx) halving",
           fmt("%d/20 instances with ratio >= 1.8, worst ratio %.2f, aggregate %.2f", good, worst,
               sum_coarse / sum_fine));
}

void idiosyncratic_scaling() {
    const auto c = constant_coefficients(0.0, 1.0, 0.5);
    const auto nu0 = InitialDensity::truncated_gaussian(1.0, 0.3);
    const TimeGrid grid(1.0, 100);
    const auto phi = gaussian_test_function(1.0);
    const std::vector<std::size_t> ns{250, 1000, 4000};
    const std::size_t runs = 200;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> log_n, log_ms, ms;
    for (std::size_t n : ns) {
        std::vector<double> sq(runs);
        std::vector<std::optional<ParticleRun>> kept(runs);
        parallel_for(runs, kThreads, [&](std::size_t r) {
            ParticleOptions opt;
            opt.record_trajectory = true;
            ParticleRun run = simulate(nu0, c, n, sample(grid, derive_seed(5, r), 0), derive_seed(6, r),
                                       std::vector<double>{0.5, 1.0}, opt);
            const double s = idiosyncratic_driver(*run.trajectory, c, grid, phi);
            sq[r] = s * s;
            run.trajectory.reset();
            kept[r] = std::move(run);
        });
        for (const auto& run : kept) {
            audit.particles(*run);
        }
        ms.push_back(oracle::mean(sq));
        log_n.push_back(std::log(static_cast<double>(n)));
        log_ms.push_back(std::log(ms.back()));
    }
    const double secs = seconds_since(t0);
    const auto fit = least_squares(log_n, log_ms);
    report(5, fit.slope >= -1.15 && fit.slope <= -0.85 && secs < 300.0,
           "slope of log E[sup|I^N|^2] vs log N",
           fmt("slope=%.3f in [-1.15,-0.85], E=%.3g/%.3g/%.3g, %.0fs < 300s", fit.slope, ms[0], ms[1], ms[2], secs));
}

void particle_to_spde() {
    const auto c = constant_coefficients(0.0, 1.0, 0.5);
    const auto nu0 = InitialDensity::truncated_gaussian(1.0, 0.3);
    const auto w = sample(TimeGrid(1.0, 200), 1, 0);
    SolverConfig cfg;
    cfg.dx = 0.01;
    const std::vector<std::size_t> ns{250, 1000, 4000};
    const auto rep = convergence_study(ns, w, c, nu0, cfg, 50, 2, kThreads);
    cfg.grid = w.grid;
    audit.spde(solve(cfg, c, nu0, w, std::vector<double>{0.5, 1.0}));
    int pair01 = 0, pair12 = 0;
    for (std::size_t s = 0; s < 50; ++s) {
        pair01 += rep.per_seed[0][s] > rep.per_seed[1][s];
        pair12 += rep.per_seed[1][s] > rep.per_seed[2][s];
    }
    const auto chain = rep.strictly_decreasing_count();
    report(6, chain >= 45, "per-seed time-averaged |L^N - L| strictly decreasing over N=250,1000,4000",
           fmt("%zu/50 seeds (need 45); pairwise 250>1000 %d/50, 1000>4000 %d/50; mean distances %.4g %.4g %.4g, "
               "log-log slope %.3f",
               chain, pair01, pair12, rep.distances[0], rep.distances[1], rep.distances[2], rep.fit.slope));
}

RunConfig figure2_short() {
    Json doc = preset("figure2");
    doc["time"] = {{"horizon", 1.0}, {"n_steps", 50}};
    return resolve_config(doc);
}

void antithetic_reduction() {
    const auto rc = figure2_short();
    const auto payoff = tranche_payoff(0.1, 0.3);
    int wins = 0;
    double ratio_sum = 0.0;
    for (std::uint64_t r = 0; r < 30; ++r) {
        const auto anti = price(payoff, 1000, rc.solver, rc.coefficients, rc.initial_density, derive_seed(1000, r),
                                true, kThreads);
        const auto plain = price(payoff, 1000, rc.solver, rc.coefficients, rc.initial_density, derive_seed(2000, r),
                                 false, kThreads);
        const double va = anti.std_error * anti.std_error, vp = plain.std_error * plain.std_error;
        wins += va < vp ? 1 : 0;
        ratio_sum += va / vp;
    }
    report(8, wins >= 24, "antithetic vs plain estimator variance, tranche [0.1,0.3], m=1000",
           fmt("%d/30 replications lower (need 24), mean variance ratio %.3f", wins, ratio_sum / 30.0));
}

void girsanov_consistency() {
    Json doc = preset("figure2");
    doc["time"] = {{"horizon", 1.0}, {"n_steps", 20}};
    const auto rc = resolve_config(doc);
    const auto payoff = tranche_payoff(0.1, 0.3);
    const auto base = price(payoff, 200, rc.solver, rc.coefficients, rc.initial_density, 7, false, kThreads);
    const auto zero = price_tilted(payoff, 200, rc.solver, rc.coefficients, rc.initial_density, 7, 0.0, false, kThreads);
    std::ostringstream a, b;
    write_estimate_csv(a, base);
    write_samples_csv(a, base);
    write_estimate_csv(b, zero);
    write_samples_csv(b, zero);
    const bool identical = a.str() == b.str();

    int agree = 0;
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto plain = price(payoff, 200, rc.solver, rc.coefficients, rc.initial_density, derive_seed(3000, s),
                                 false, kThreads);
        for (double theta : {0.5, -0.5}) {
            const auto tilted = price_tilted(payoff, 200, rc.solver, rc.coefficients, rc.initial_density,
                                             derive_seed(4000, s), theta, false, kThreads);
            const double z = std::fabs(tilted.mean - plain.mean) / std::hypot(tilted.std_error, plain.std_error);
            worst = std::max(worst, z);
            agree += z <= 3.0 ? 1 : 0;
        }
    }
    report(9, identical && agree == 40, "Girsanov tilt: theta=0 bit-identical, theta=+-0.5 consistent",
           fmt("theta=0 %s; %d/40 seed-theta pairs within 3 combined s.e., worst %.2f", identical ? "identical" : "DIFFERS",
               agree, worst));
}

void figure2_reproduction() {
    const auto rc = resolve_config(preset("figure2"));
    const std::size_t paths = 50;
    SolverConfig cfg = rc.solver;
    cfg.snapshot_stride = 40;
    std::vector<std::optional<SolveResult>> results(paths);
    parallel_for(paths, kThreads, [&](std::size_t p) {
        results[p] = solve(cfg, rc.coefficients, rc.initial_density, sample(rc.grid, derive_seed(10, p), 0));
    });

    const std::vector<double> levels{0.2, 0.4, 0.6, 0.8};
    std::size_t ordered = 0, reach_all = 0;
    int qv_wins = 0, rough_wins = 0, compared = 0;
    for (const auto& slot : results) {
        const SolveResult& r = *slot;
        audit.spde(r);
        // levels reached form a prefix of the list, with nondecreasing hitting times
        double prev = 0.0;
        bool in_order = true, all = true;
        for (double lvl : levels) {
            const double t = r.loss.hitting_time(lvl);
            if (t < 0.0) {
                all = false;
                continue;
            }
            in_order = in_order && all && t >= prev;
            prev = t;
        }
        ordered += in_order ? 1 : 0;
        reach_all += all ? 1 : 0;

        // realized quadratic variation of the loss over steps that start in a
        // high-correlation band versus a low-correlation band
        const auto& v = r.loss.values;
        double qv_high = 0.0, qv_low = 0.0, rough_high = 0.0, rough_low = 0.0, sq_high = 0.0, sq_low = 0.0;
        bool visited_high = false, visited_low = false;
        for (std::size_t k = 0; k + 1 < v.size(); ++k) {
            const double inc = v[k + 1] - v[k];
            const bool high = rc.coefficients.rho(rc.grid.time(k), v[k]) > 0.5;
            (high ? qv_high : qv_low) += inc * inc;
            (high ? visited_high : visited_low) = true;
            if (k >= 1 && k + 2 < v.size()) {
                const double local = inc - 0.5 * ((v[k] - v[k - 1]) + (v[k + 2] - v[k + 1]));
                (high ? rough_high : rough_low) += local * local;
                (high ? sq_high : sq_low) += inc * inc;
            }
        }
        if (visited_high && visited_low) {
            ++compared;
            qv_wins += qv_high > qv_low ? 1 : 0;
            if (sq_high > 0.0 && sq_low > 0.0) {
                rough_wins += rough_high / sq_high > rough_low / sq_low ? 1 : 0;
            }
        }
    }
    const double p_value = oracle::sign_test_p(qv_wins, compared);
    const bool pass = ordered == paths && reach_all > 0 && compared == static_cast<int>(paths) && p_value < 0.05;
    report(10, pass, "figure2 preset: ordered level visits and higher QV in high-correlation bands",
           fmt("levels in order on %zu/%zu paths, %zu reach 4/5; QV high>low on %d/%d, sign-test p=%.3g; "
               "detrended roughness high>low on %d/%d",
               ordered, paths, reach_all, qv_wins, compared, p_value, rough_wins, compared));
}

// -------------------------------------------------------------------------
// CLI determinism

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(MVLOSS_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Compares every regular file under a and b byte for byte.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) {
            files.push_back(fs::relative(e.path(), a));
        }
    }
    std::size_t count_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b)) {
        count_b += e.is_regular_file() ? 1 : 0;
    }
    if (files.empty() || files.size() != count_b) {
        why = "file sets differ under " + a.filename().string();
        return false;
    }
    for (const auto& f : files) {
        if (slurp(a / f) != slurp(b / f)) {
            why = f.string() + " differs";
            return false;
        }
    }
    return true;
}

void cli_determinism() {
    const fs::path root = fs::temp_directory_path() / "mvloss_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    {
        std::ofstream(root / "converge.json") << R"({"preset": "constant", "time": {"horizon": 1, "n_steps": 50},
            "solver": {"dx": 0.02}, "coefficients": {"rho": 0.5},
            "initial_density": {"type": "truncated_gaussian", "mean": 1, "stddev": 0.3},
            "convergence": {"n_values": [100, 400, 1600], "seeds_per_n": 6}})";
    }
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "simulate --preset figure2 --n 5000"},
        {"solve", "solve --preset figure2 --backend fd"},
        {"price", "price --preset figure2 --delta 0.1 --m 40 --antithetic"},
        {"price_tilted", "price --preset figure2 --delta 0.1 --m 40 --theta -0.5"},
        {"converge", "converge --config " + (root / "converge.json").string()},
    };
    std::vector<std::string> problems;
    for (const auto& [name, args] : commands) {
        for (unsigned threads : {1u, 4u}) {
            const fs::path out = root / (name + "_t" + std::to_string(threads));
            const int code =
                run_cli(args + " --seed 3 --threads " + std::to_string(threads) + " --out " + out.string(),
                        root / (name + ".log"));
            if (code != 0) {
                problems.push_back(name + " exited " + std::to_string(code));
            }
        }
        std::string why;
        if (!same_tree(root / (name + "_t1"), root / (name + "_t4"), why)) {
            problems.push_back(name + ": " + why);
        }
    }
    // diagnose re-reads the solve directories; its reports must agree too
    for (const char* d : {"solve_t1", "solve_t4"}) {
        if (run_cli("diagnose " + (root / d).string(), root / "diagnose.log") != 0) {
            problems.push_back(std::string("diagnose ") + d + " failed");
        }
    }
    if (slurp(root / "solve_t1" / "report.csv") != slurp(root / "solve_t4" / "report.csv")) {
        problems.push_back("diagnose report differs");
    }
    std::string detail = "simulate, solve, price (plain, antithetic, tilted), converge, diagnose at --threads 1 vs 4";
    for (const auto& p : problems) {
        detail += "; " + p;
    }
    report(11, problems.empty(), "byte-identical artifacts across thread counts", detail);
    fs::remove_all(root);
}

}  // namespace

int main() {
    std::printf("acceptance run with %u worker threads\n", kThreads);
    hitting_law_spde();
    hitting_law_particles();
    backend_equivalence();
    idiosyncratic_scaling();
    particle_to_spde();
    antithetic_reduction();
    girsanov_consistency();
    figure2_reproduction();
    cli_determinism();
    report(4, audit.monotone_violations == 0 && audit.mass_violations == 0,
           "alive mass + loss = 1 and nondecreasing loss on every run above",
           fmt("%zu runs, %zu monotonicity violations, %zu conservation violations, worst SPDE gap %.2e", audit.runs,
               audit.monotone_violations, audit.mass_violations, audit.worst_mass_gap));
    std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
