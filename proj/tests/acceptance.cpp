// Acceptance run: one PASS/FAIL line per criterion on the full baseline grid.
// INFO lines carry diagnostics. Exit status is 0 once every line is printed;
// the verdicts are in the output.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "forest/artifacts.hpp"
#include "forest/checks.hpp"
#include "forest/oracles.hpp"
#include "forest/policy_sim.hpp"
#include "forest/solver.hpp"

using namespace forest;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::ostringstream transcript;

void line(const std::string& tag, bool pass, const std::string& detail) {
    const std::string text = std::string(pass ? "PASS " : "FAIL ") + tag + " : " + detail;
    std::cout << text << std::endl;
    transcript << text << "\n";
}

void info(const std::string& tag, const std::string& detail) {
    const std::string text = "INFO " + tag + " : " + detail;
    std::cout << text << std::endl;
    transcript << text << "\n";
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct Areas {
    RegionMetrics at_half;  // t = 0.5
    RegionMetrics at_date;  // t_1, date decisions
};

Areas areas(const ValueField& field) {
    const auto& g = field.grid();
    const SliceRef half = locate_slice(field, 0.5);
    const SliceRef date = locate_slice(field, field.schedule().date(1));
    return {region_metrics({field.labels(half.k, half.step, 0), g.n_r, g.n_s}),
            region_metrics({field.labels(date.k, date.step, 0), g.n_r, g.n_s})};
}

// largest decrease of w along s with j restricted to |s| <= frac * s_max
double interior_s_decrease(const ValueField& field, double frac) {
    const auto& g = field.grid();
    double worst = 0.0;
    for_each_slice(field, [&](int k, int step, int level) {
        const auto w = field.values(k, step, level);
        for (int j = 0; j + 1 < g.n_s; ++j) {
            if (std::abs(g.s(j)) > frac * g.s_max || std::abs(g.s(j + 1)) > frac * g.s_max) continue;
            for (int i = 0; i < g.n_r; ++i) worst = std::max(worst, w[g.index(i, j)] - w[g.index(i, j + 1)]);
        }
    });
    return worst;
}

SimReport run_mc(const ValueField& field, const ModelParams& p, bool filter, int threads) {
    SimOptions so;
    so.n_paths = 10000;
    so.seed = 42;
    so.threads = threads;
    so.profitable_filter = filter;
    return simulate(field, {0.0, 0.5, 1.0, 1.0}, {}, so, p);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria on the baseline configuration"};
    std::string out_dir;
    int threads = 1;
    app.add_option("--out", out_dir, "Directory for acceptance.txt");
    app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    const ModelParams base = baseline_params();  // K = 0.3
    const GridSpec grid = build_grid(base);
    SolverOptions so;
    so.threads = threads;

    // 1. monotonicity + runtime
    const SolveResult res = solve(base, grid, so);
    const ValueField& field = res.field;
    const FieldReport fr = check_field(field, base);
    info("baseline_solve", num(res.meta.wall_seconds) + " s, " + std::to_string(res.meta.howard_iterations) +
                               " policy iterations, " + std::to_string(res.meta.clamp_count) + " r_max clamps");
    line("1 monotone_in_r", fr.max_r_decrease <= 1e-8, "max decrease " + num(fr.max_r_decrease) + " (tol 1e-08)");
    line("1 monotone_in_s", fr.max_s_decrease <= 1e-8, "max decrease " + num(fr.max_s_decrease) + " (tol 1e-08)");
    {
        const auto m = [&] {
            long count = 0;
            const auto& g = field.grid();
            for_each_slice(field, [&](int k, int step, int level) {
                const auto w = field.values(k, step, level);
                for (int i = 0; i < g.n_r; ++i)
                    for (int j = 0; j + 1 < g.n_s; ++j)
                        if (w[g.index(i, j)] - w[g.index(i, j + 1)] > 1e-8) ++count;
            });
            return count;
        }();
        info("1 monotone_in_s", std::to_string(m) + " violating node pairs; central half of the price band: max "
                                    "decrease " + num(interior_s_decrease(field, 0.5)));
    }
    line("1 baseline_runtime", res.meta.wall_seconds < 600.0, num(res.meta.wall_seconds) + " s (limit 600 s)");

    // 2. QVI residuals and growth
    line("2 qvi_obstacle", fr.max_obstacle_gap <= 1e-8, "max (Hw - w) " + num(fr.max_obstacle_gap) + " (tol 1e-08)");
    line("2 continuation_residual", res.meta.max_continuation_residual <= so.tol_policy,
         "max residual " + num(res.meta.max_continuation_residual) + " (tol " + num(so.tol_policy) + ")");
    line("2 growth_bound", fr.finite && fr.min_value >= -1e-8 && fr.max_growth_ratio <= kGrowthConstant,
         "min w " + num(fr.min_value) + ", max w/(1+r^4+p^4+q^4) " + num(fr.max_growth_ratio) + " (C " +
             num(kGrowthConstant) + ")");

    // 3. MC vs PDE
    const auto t_mc = Clock::now();
    const SimReport mc = run_mc(field, base, true, threads);
    const double mc_seconds = seconds_since(t_mc);
    line("3 mc_upper_bound", mc.estimate <= mc.pde_value + 3 * mc.std_error,
         "J_MC " + num(mc.estimate) + " (SE " + num(mc.std_error) + "), v " + num(mc.pde_value));
    line("3 mc_relative_gap", mc.rel_gap <= 0.05, "relative gap " + num(mc.rel_gap) + " (limit 0.05)");
    line("3 mc_runtime", mc_seconds < 120.0, num(mc_seconds) + " s (limit 120 s)");
    info("3 mc", "mean harvests " + num(mc.mean_harvests) + ", mean harvest time " + num(mc.mean_harvest_time) +
                     ", s clamps " + std::to_string(mc.s_clamps) + ", r clamps " + std::to_string(mc.r_clamps));

    // 4. DPP at the first date
    const DppReport dpp = dpp_check(field, {0.0, 0.5, 1.0, 1.0}, {}, StopAtFirstDate{}, 10000, 42, base, 32, 0.02,
                                    threads);
    line("4 dpp_first_date", dpp.holds,
         "v " + num(dpp.value_now) + " >= mean " + num(dpp.mean_later) + " - 3 SE (" + num(dpp.std_error) +
             ") - " + num(dpp.tol_disc));

    // 5. profitable filter with common random numbers
    {
        const SimReport off = run_mc(field, base, false, threads);
        const auto n = static_cast<double>(mc.payoffs.size());
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < mc.payoffs.size(); ++i) mean += mc.payoffs[i] - off.payoffs[i];
        mean /= n;
        for (std::size_t i = 0; i < mc.payoffs.size(); ++i) {
            const double d = mc.payoffs[i] - off.payoffs[i] - mean;
            sq += d * d;
        }
        const double se = std::sqrt(sq / (n - 1) / n);
        line("5 profitable_filter", mean >= -3 * se,
             "J(filter) - J(no filter) = " + num(mean) + " (paired SE " + num(se) + "), skipped " +
                 std::to_string(mc.skipped_unprofitable));
    }

    // 6. no simultaneous plant and harvest
    line("6 plant_and_harvest_nodes", fr.plant_and_harvest == 0,
         std::to_string(fr.plant_and_harvest) + " PLANT_AND_HARVEST nodes");
    line("6 plant_and_harvest_paths", mc.simultaneous_plant_harvest == 0,
         std::to_string(mc.simultaneous_plant_harvest) + " simultaneous events on " + std::to_string(mc.n_paths) +
             " paths");

    // 7. sensitivity directions
    const Areas b = areas(field);
    info("7 baseline_areas", "harvest " + std::to_string(b.at_half.harvest_area) + " (lower s " +
                                 std::to_string(b.at_half.harvest_area_lower_s) + "), plant " +
                                 std::to_string(b.at_date.plant_area) + " (lower s " +
                                 std::to_string(b.at_date.plant_area_lower_s) + ", max r index " +
                                 std::to_string(b.at_date.plant_max_r_index) + ")");
    auto sensitivity = [&](const std::string& tag, auto mutate, auto judge) {
        ModelParams p = base;
        mutate(p);
        const SolveResult r = solve(p, grid, so);
        const Areas a = areas(r.field);
        std::string detail = "harvest " + std::to_string(a.at_half.harvest_area) + " (lower s " +
                             std::to_string(a.at_half.harvest_area_lower_s) + "), plant " +
                             std::to_string(a.at_date.plant_area) + " (lower s " +
                             std::to_string(a.at_date.plant_area_lower_s) + ", max r index " +
                             std::to_string(a.at_date.plant_max_r_index) + "), " + num(r.meta.wall_seconds) + " s";
        line("7 " + tag, judge(a) && r.meta.wall_seconds < 600.0, detail);
    };
    sensitivity(
        "lambda_0.9", [](ModelParams& p) { p.lambda_cap = 0.9; },
        [&](const Areas& a) {
            return a.at_half.harvest_area >= b.at_half.harvest_area && a.at_date.plant_area <= b.at_date.plant_area;
        });
    sensitivity(
        "eta_0.8", [](ModelParams& p) { p.eta = 0.8; },
        [&](const Areas& a) { return a.at_date.plant_area_lower_s <= b.at_date.plant_area_lower_s; });
    sensitivity(
        "mu_0.09", [](ModelParams& p) { p.mu = 0.09; },
        [&](const Areas& a) {
            return a.at_date.plant_area >= b.at_date.plant_area &&
                   a.at_half.harvest_area_lower_s <= b.at_half.harvest_area_lower_s;
        });
    sensitivity(
        "c1_c3_0.15",
        [](ModelParams& p) {
            p.c1 = 0.15;
            p.c3 = 0.15;
        },
        [&](const Areas& a) {
            return a.at_date.plant_area <= b.at_date.plant_area &&
                   a.at_date.plant_max_r_index <= b.at_date.plant_max_r_index;
        });

    // 8. oracles on the reduced grid
    {
        const auto t8 = Clock::now();
        RunConfig cfg;
        cfg.model = base;
        ModelParams det = base;
        det.gamma = det.sigma = det.varsigma = 0.0;
        cfg.model = det;
        const GridSpec dg = check_grid(cfg);
        const SolveResult ds = solve(det, dg, so);
        oracle::ChainDp dp(det, dg);
        const auto ref = dp.solve_all();
        const auto got = ds.field.values(0, 0, 0);
        double diff = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) diff = std::max(diff, std::abs(ref[i] - got[i]));
        line("8 deterministic_dp_oracle", diff <= 1e-6, "max |w - w_dp| " + num(diff) + " (tol 1e-06)");

        const auto mean = compare_sampler_with_euler(0.5, 1.0, 32, 1024, 20000, 42, base);
        line("8 sampler_vs_euler", mean.within(3.0),
             "mean " + num(mean.mean_a) + " vs " + num(mean.mean_b) + " (combined SE " + num(mean.combined_se) + ")");

        GridOverrides small;
        small.n_r = 9;
        small.n_s = 7;
        const GridSpec sg = build_grid(base, small);
        const auto rows = build_generator(base, sg);
        std::vector<double> w(sg.nodes());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 + std::sin(2.0 * static_cast<double>(i));
        const auto fast = implicit_step(w, 0.02, rows, sg);
        const auto dense = oracle::dense_implicit_solve(base, sg, 0.02, w);
        double step_diff = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) step_diff = std::max(step_diff, std::abs(fast.values[i] - dense[i]));
        line("8 implicit_step_vs_dense", step_diff <= 1e-10, "max diff " + num(step_diff) + " (tol 1e-10)");
        const double s8 = seconds_since(t8);
        line("8 oracle_runtime", s8 < 120.0, num(s8) + " s (limit 120 s)");
    }

    // 9. scheme soundness on the baseline grid
    {
        const auto rows = build_generator(base, grid);
        const auto st = check_stencils(rows);
        line("9 m_matrix_rows", st.negative_rates == 0 && st.bad_row_sums == 0,
             std::to_string(st.rows - st.negative_rates) + "/" + std::to_string(st.rows) + " rows nonnegative, " +
                 std::to_string(st.bad_row_sums) + " nonzero row sums");
        const auto lc = check_local_consistency(rows, base, grid);
        line("9 local_consistency", lc.max_first_moment_error <= 1e-12 && lc.max_second_moment_excess <= 1e-12,
             "first moment error " + num(lc.max_first_moment_error) + ", second moment excess over |drift| h " +
                 num(lc.max_second_moment_excess));
    }

    if (!out_dir.empty()) {
        try {
            ensure_dir(out_dir);
            write_text(fs::path(out_dir) / "acceptance.txt", transcript.str());
        } catch (const IoError& e) {
            std::cerr << e.what() << "\n";
        }
    }
    return 0;
}
