// forest: solve, simulate, inspect regions and run the check suite.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "forest/artifacts.hpp"
#include "forest/checks.hpp"
#include "forest/config.hpp"
#include "forest/policy_sim.hpp"
#include "forest/solver.hpp"

namespace {

using namespace forest;

enum Exit : int {
    kOk = 0,
    kConfig = 1,
    kConvergence = 2,
    kIo = 3,
    kHashMismatch = 4,
    kCheckFailed = 5,
    kAdmissibility = 6,
};

struct Globals {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool quiet = false;
};

void say(const Globals& g, const std::string& line) {
    if (!g.quiet) std::cout << line << "\n";
}

RunConfig load(const Globals& g) {
    if (g.config.empty()) throw ConfigError("--config is required");
    RunConfig cfg = load_config(g.config);
    if (!g.out.empty()) cfg.output.dir = g.out;
    if (g.seed) cfg.sim.seed = *g.seed;
    for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << "\n";
    return cfg;
}

std::vector<SliceRef> region_slices(const ValueField& field, const std::vector<double>& times) {
    std::vector<SliceRef> out;
    for (double t : times) out.push_back(locate_slice(field, t));
    return out;
}

void emit_regions(const fs::path& dir, const ValueField& field, const std::vector<double>& times, bool pgm,
                  const Globals& g) {
    write_regions_csv(dir / "regions.csv", field, region_slices(field, times));
    for (double t : times) {
        const SliceRef ref = locate_slice(field, t);
        const auto labels = field.labels(ref.k, ref.step, 0);
        const auto metrics = region_metrics({labels, field.grid().n_r, field.grid().n_s});
        const std::string tag = "t" + format_double(t);
        write_text(dir / ("regions_summary_" + tag + ".txt"), region_summary_text(t, ref, 0, metrics));
        if (pgm) write_label_pgm(dir / ("regions_" + tag + ".pgm"), field, ref, 0);
        say(g, "t=" + format_double(t) + ": continue " + std::to_string(metrics.counts[0]) + ", harvest " +
                   std::to_string(metrics.harvest_area) + ", plant " + std::to_string(metrics.plant_area));
    }
}

int cmd_solve(const Globals& g) {
    const RunConfig cfg = load(g);
    SolverOptions so = cfg.solver;
    so.threads = g.threads;
    const GridSpec grid = cfg.grid_spec();
    say(g, "solving on " + std::to_string(grid.n_r) + " x " + std::to_string(grid.n_s) + " nodes, " +
               std::to_string(grid.n_e) + " quantity levels, " + std::to_string(grid.n_t) + " steps per interval");
    const SolveResult res = solve(cfg.model, grid, so);
    const fs::path dir = cfg.output.dir;
    ensure_dir(dir);
    const double v0 = field_value(res.field, 0, 0, res.field.level_of(cfg.sim.pending0), cfg.sim.z0);
    write_text(dir / "resolved_config", echo_config(cfg));
    write_text(dir / "meta.txt", meta_text(cfg, res.meta, v0));
    write_field(dir / "field.bin", res.field);
    const long files = write_value_slices(dir, res.field, cfg.output.value_slices);
    emit_regions(dir, res.field, cfg.output.region_times, cfg.output.pgm, g);
    say(g, "value at z0: " + format_double(v0));
    say(g, "wall seconds: " + format_double(res.meta.wall_seconds) + ", value files: " + std::to_string(files));
    return kOk;
}

ValueField load_matching_field(const RunConfig& cfg, const fs::path& dir) {
    const auto meta = parse_meta(read_text(dir / "meta.txt"));
    const auto it = meta.find("config_hash");
    const std::string want = config_hash(cfg);
    if (it == meta.end() || it->second != want)
        throw std::domain_error("config hash " + want + " does not match the artifacts in '" + dir.string() + "' (" +
                                (it == meta.end() ? std::string("none") : it->second) + ")");
    return read_field(dir / "field.bin");
}

int cmd_simulate(const Globals& g, const std::string& values_dir) {
    const RunConfig cfg = load(g);
    const fs::path values = values_dir.empty() ? fs::path(cfg.output.dir) : fs::path(values_dir);
    const ValueField field = load_matching_field(cfg, values);
    SimOptions so;
    so.n_paths = cfg.sim.n_paths;
    so.seed = cfg.sim.seed;
    so.n_sub = cfg.sim.n_sub;
    so.threads = g.threads;
    so.profitable_filter = cfg.sim.profitable_filter;
    so.record_paths = cfg.sim.record_paths;
    const SimReport rep = simulate(field, cfg.sim.z0, cfg.sim.pending0, so, cfg.model);
    const fs::path dir = cfg.output.dir;
    ensure_dir(dir);
    write_sim_report(dir / "sim_report.csv", rep);
    if (so.record_paths > 0) write_paths_csv(dir / "paths.csv", rep);
    say(g, "J_MC " + format_double(rep.estimate) + " (SE " + format_double(rep.std_error) + "), value " +
               format_double(rep.pde_value) + ", relative gap " + format_double(rep.rel_gap));
    if (rep.admissibility_violations > 0) {
        std::cerr << "error: " << rep.admissibility_violations << " admissibility violations\n";
        return kAdmissibility;
    }
    return kOk;
}

int cmd_regions(const Globals& g, const std::string& values_dir, const std::vector<double>& times) {
    if (values_dir.empty()) throw ConfigError("--values is required");
    const ValueField field = read_field(fs::path(values_dir) / "field.bin");
    const fs::path dir = g.out.empty() ? fs::path(values_dir) : fs::path(g.out);
    ensure_dir(dir);
    for (double t : times)
        if (t < 0.0 || t > field.schedule().horizon() + 1e-12)
            throw std::out_of_range("no slice at t = " + format_double(t));
    emit_regions(dir, field, times, true, g);
    return kOk;
}

int cmd_check(const Globals& g, const std::string& fault, long paths) {
    const RunConfig cfg = load(g);
    CheckOptions opts;
    opts.threads = g.threads;
    opts.seed = cfg.sim.seed;
    opts.inject_fault = fault;
    opts.n_paths = paths;
    const auto lines = run_checks(cfg, opts);
    bool ok = true;
    for (const auto& l : lines) {
        std::cout << (l.pass ? "PASS " : "FAIL ") << l.name << " : " << l.detail << "\n";
        ok = ok && l.pass;
    }
    return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal harvesting and delayed renewal of a stochastic forest"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Run configuration file");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--seed", g.seed, "Monte Carlo seed");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--quiet", g.quiet, "Only print errors");

    std::string values_dir;
    std::vector<double> times{0.5};
    std::string fault;
    long check_paths = 2000;

    auto* solve_cmd = app.add_subcommand("solve", "Solve the value function and write artifacts");
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo of the extracted strategy");
    sim_cmd->add_option("--values", values_dir, "Directory of a matching solve run (default: output dir)");
    auto* regions_cmd = app.add_subcommand("regions", "Region maps and metrics of solved slices");
    regions_cmd->add_option("--values", values_dir, "Directory of a solve run")->required();
    regions_cmd->add_option("--time", times, "Slice times");
    auto* check_cmd = app.add_subcommand("check", "Run the invariant suites on the reduced grid");
    check_cmd->add_option("--inject-fault", fault, "Test mode: corrupt the scheme (negative_offdiag)");
    check_cmd->add_option("--paths", check_paths, "Monte Carlo paths per check");
    for (auto* sub : {solve_cmd, sim_cmd, regions_cmd, check_cmd}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfig;
    }

    try {
        if (*solve_cmd) return cmd_solve(g);
        if (*sim_cmd) return cmd_simulate(g, values_dir);
        if (*regions_cmd) return cmd_regions(g, values_dir, times);
        if (*check_cmd) return cmd_check(g, fault, check_paths);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const ConvergenceError& e) {
        std::cerr << "solver did not converge: " << e.what() << "\n";
        return kConvergence;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kHashMismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    }
    return kOk;
}
