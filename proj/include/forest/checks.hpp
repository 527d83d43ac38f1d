#pragma once

// Invariant checks over stencils and solved fields, and the check suite run
// by the `check` subcommand.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "forest/chain.hpp"
#include "forest/config.hpp"
#include "forest/oracles.hpp"
#include "forest/policy_sim.hpp"
#include "forest/rng.hpp"
#include "forest/solver.hpp"

namespace forest {

/// Growth constant C in 0 <= w <= C (1 + r^4 + p^4 + q^4), fitted once on the
/// baseline solve (max ratio 0.4784, rounded up) and frozen.
constexpr double kGrowthConstant = 0.5;

struct CheckLine {
    std::string name;
    bool pass = false;
    std::string detail;
};

inline std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, format, a, b, c);
    return buf;
}

// ---------------------------------------------------------------------------
// Stencil checks
// ---------------------------------------------------------------------------

struct StencilReport {
    long rows = 0;
    long negative_rates = 0;
    long bad_row_sums = 0;
};

inline StencilReport check_stencils(std::span<const GeneratorRow> rows) {
    StencilReport rep;
    for (const auto& row : rows) {
        ++rep.rows;
        if (row.r_down < 0 || row.r_up < 0 || row.s_down < 0 || row.s_up < 0) ++rep.negative_rates;
        const double sum = row.diagonal() + row.r_down + row.r_up + row.s_down + row.s_up;
        if (std::abs(sum) > 1e-12 * std::max(1.0, row.total_rate())) ++rep.bad_row_sums;
    }
    return rep;
}

struct ConsistencyReport {
    double max_first_moment_error = 0.0;
    /// max over interior nodes of |second moment - variance| - |drift| h
    double max_second_moment_excess = -std::numeric_limits<double>::infinity();
    long nodes = 0;
};

/// Discrete first and second moments of the chain's jump per unit time, per
/// axis, at nodes where both neighbours exist.
inline ConsistencyReport check_local_consistency(std::span<const GeneratorRow> rows, const ModelParams& params,
                                                 const GridSpec& grid) {
    ConsistencyReport rep;
    const auto sc = log_price_coefficients(params);
    for (int i = 1; i + 1 < grid.n_r; ++i) {
        for (int j = 1; j + 1 < grid.n_s; ++j) {
            const auto& row = rows[grid.index(i, j)];
            const auto rc = resource_coefficients(grid.r(i), params);
            const double hr = grid.h_r();
            const double hs = grid.h_s();
            const double m1r = (row.r_up - row.r_down) * hr;
            const double m2r = (row.r_up + row.r_down) * hr * hr;
            const double m1s = (row.s_up - row.s_down) * hs;
            const double m2s = (row.s_up + row.s_down) * hs * hs;
            rep.max_first_moment_error = std::max({rep.max_first_moment_error, std::abs(m1r - rc.drift),
                                                   std::abs(m1s - sc.drift)});
            rep.max_second_moment_excess =
                std::max({rep.max_second_moment_excess, std::abs(m2r - rc.variance) - std::abs(rc.drift) * hr,
                          std::abs(m2s - sc.variance) - std::abs(sc.drift) * hs});
            ++rep.nodes;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Field checks
// ---------------------------------------------------------------------------

template <typename Fn>
void for_each_slice(const ValueField& field, Fn&& fn) {
    for (int k = 0; k < field.intervals(); ++k)
        for (int step = 0; step <= field.steps(); ++step)
            for (int level = 0; level < field.levels(k); ++level) fn(k, step, level);
}

struct FieldReport {
    double min_value = std::numeric_limits<double>::infinity();
    double max_obstacle_gap = -std::numeric_limits<double>::infinity();  // max (H w - w)
    double max_r_decrease = 0.0;
    double max_s_decrease = 0.0;
    double max_growth_ratio = 0.0;  // w / (1 + r^4 + p^4 + q^4)
    long r0_harvest_labels = 0;
    long terminal_positive_orders = 0;
    long plant_and_harvest = 0;
    bool finite = true;
};

inline FieldReport check_field(const ValueField& field, const ModelParams& params) {
    FieldReport rep;
    const GridSpec& g = field.grid();
    for_each_slice(field, [&](int k, int step, int level) {
        const auto w = field.values(k, step, level);
        const auto labels = field.labels(k, step, level);
        const auto sup = harvest_sup(w, g, params, true);
        for (int i = 0; i < g.n_r; ++i) {
            for (int j = 0; j < g.n_s; ++j) {
                const std::size_t idx = g.index(i, j);
                const double v = w[idx];
                if (!std::isfinite(v)) rep.finite = false;
                rep.min_value = std::min(rep.min_value, v);
                rep.max_obstacle_gap = std::max(rep.max_obstacle_gap, sup.values[idx] - v);
                if (i + 1 < g.n_r) rep.max_r_decrease = std::max(rep.max_r_decrease, v - w[g.index(i + 1, j)]);
                if (j + 1 < g.n_s) rep.max_s_decrease = std::max(rep.max_s_decrease, v - w[g.index(i, j + 1)]);
                const double r = g.r(i);
                const double p = std::exp(g.s(j));
                rep.max_growth_ratio = std::max(rep.max_growth_ratio, v / (1.0 + std::pow(r, 4) + 2.0 * std::pow(p, 4)));
                const auto label = static_cast<Region>(labels[idx]);
                if (i == 0 && step < field.steps() && label != Region::Continue) ++rep.r0_harvest_labels;
                if (label == Region::PlantAndHarvest) ++rep.plant_and_harvest;
            }
        }
        if (k == field.intervals() - 1 && step == field.steps()) {
            const auto plant = field.plant_levels(k, step, level);
            for (auto l : plant)
                if (l != 0) ++rep.terminal_positive_orders;
        }
    });
    return rep;
}

// ---------------------------------------------------------------------------
// Sampler checks
// ---------------------------------------------------------------------------

struct MeanComparison {
    double mean_a = 0.0;
    double mean_b = 0.0;
    double combined_se = 0.0;
    bool within(double k_se) const { return std::abs(mean_a - mean_b) <= k_se * combined_se; }
};

/// Closed-form sampler (n_sub draws) against Euler-Maruyama (fine steps) on
/// independent draws, for R at time `horizon` from r0.
inline MeanComparison compare_sampler_with_euler(double r0, double horizon, int n_sub, int euler_steps, long paths,
                                                 std::uint64_t seed, const ModelParams& params) {
    double sa = 0, sa2 = 0, sb = 0, sb2 = 0;
    std::vector<double> draws_a(static_cast<std::size_t>(n_sub));
    std::vector<double> draws_b(static_cast<std::size_t>(euler_steps));
    for (long i = 0; i < paths; ++i) {
        NormalStream a(path_seed(seed, static_cast<std::uint64_t>(2 * i)));
        NormalStream b(path_seed(seed, static_cast<std::uint64_t>(2 * i + 1)));
        a.fill(draws_a.begin(), draws_a.end());
        b.fill(draws_b.begin(), draws_b.end());
        const double x = logistic_sample_end(r0, horizon, draws_a, params);
        const double y = oracle::euler_logistic_end(r0, horizon, draws_b, params);
        sa += x;
        sa2 += x * x;
        sb += y;
        sb2 += y * y;
    }
    const double n = static_cast<double>(paths);
    MeanComparison out;
    out.mean_a = sa / n;
    out.mean_b = sb / n;
    const double va = (sa2 / n - out.mean_a * out.mean_a) * n / (n - 1);
    const double vb = (sb2 / n - out.mean_b * out.mean_b) * n / (n - 1);
    out.combined_se = std::sqrt(va / n + vb / n);
    return out;
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

struct CheckOptions {
    int threads = 1;
    long n_paths = 2000;
    std::uint64_t seed = 42;
    /// test mode: "negative_offdiag" corrupts one generator row
    std::string inject_fault;
};

inline GridSpec check_grid(const RunConfig& cfg) {
    GridOverrides g = cfg.grid;
    g.n_r = 51;
    g.n_s = 35;
    g.n_t = 20;
    return build_grid(cfg.model, g);
}

inline std::vector<CheckLine> run_checks(const RunConfig& cfg, const CheckOptions& options) {
    std::vector<CheckLine> out;
    auto add = [&](std::string name, bool pass, std::string detail) {
        out.push_back({std::move(name), pass, std::move(detail)});
    };
    const ModelParams& params = cfg.model;
    const GridSpec grid = check_grid(cfg);
    const bool deterministic = params.gamma == 0.0 && params.sigma == 0.0;

    // stencils
    auto rows = build_generator(params, grid);
    if (options.inject_fault == "negative_offdiag") rows[grid.index(grid.n_r / 2, grid.n_s / 2)].s_up = -1.0;
    const auto st = check_stencils(rows);
    add("stencil_m_matrix", st.negative_rates == 0,
        std::to_string(st.negative_rates) + " of " + std::to_string(st.rows) + " rows with a negative rate");
    add("stencil_row_sums", st.bad_row_sums == 0, std::to_string(st.bad_row_sums) + " rows off zero sum");
    const auto lc = check_local_consistency(rows, params, grid);
    add("local_consistency_first_moment", lc.max_first_moment_error <= 1e-10,
        fmt("max error %.3g", lc.max_first_moment_error));
    add("local_consistency_second_moment", lc.max_second_moment_excess <= 1e-10,
        fmt("max (|m2 - var| - |drift| h) %.3g", lc.max_second_moment_excess));

    // implicit step against a dense solve on a small grid
    {
        GridOverrides small = cfg.grid;
        small.n_r = 9;
        small.n_s = 7;
        small.n_t = 4;
        const GridSpec sg = build_grid(params, small);
        std::vector<double> w_old(sg.nodes());
        for (int i = 0; i < sg.n_r; ++i)
            for (int j = 0; j < sg.n_s; ++j) w_old[sg.index(i, j)] = std::sin(1.0 + i) * std::cos(0.5 * j) + sg.r(i);
        const double dt = params.date_spacing() / sg.n_t;
        const auto srows = build_generator(params, sg);
        const auto fast = implicit_step(w_old, dt, srows, sg);
        const auto dense = oracle::dense_implicit_solve(params, sg, dt, w_old);
        double err = 0.0;
        for (std::size_t i = 0; i < dense.size(); ++i) err = std::max(err, std::abs(dense[i] - fast.values[i]));
        add("implicit_step_vs_dense", err <= 1e-10, fmt("max difference %.3g", err));
        double lo = *std::min_element(w_old.begin(), w_old.end());
        double hi = *std::max_element(w_old.begin(), w_old.end());
        bool bounded = std::all_of(fast.values.begin(), fast.values.end(),
                                   [&](double v) { return v >= lo - 1e-12 && v <= hi + 1e-12; });
        add("discrete_maximum_principle", bounded, "implicit step stays within input bounds");
        std::vector<double> shifted(w_old);
        for (double& v : shifted) v += 3.0;
        const auto step_shift = implicit_step(shifted, dt, srows, sg);
        double shift_err = 0.0;
        for (std::size_t i = 0; i < shifted.size(); ++i)
            shift_err = std::max(shift_err, std::abs(step_shift.values[i] - fast.values[i] - 3.0));
        add("constant_shift_equivariance", shift_err <= 1e-10, fmt("max error %.3g", shift_err));
    }

    // solve
    SolverOptions so = cfg.solver;
    so.threads = options.threads;
    const auto t0 = std::chrono::steady_clock::now();
    SolveResult solved;
    try {
        solved = solve(params, grid, so);
    } catch (const std::exception& e) {
        add("solve", false, e.what());
        return out;
    }
    add("solve", true,
        fmt("%.2f s, max continuation residual %.3g", solved.meta.wall_seconds, solved.meta.max_continuation_residual));
    const ValueField& field = solved.field;
    const auto fr = check_field(field, params);
    add("field_finite", fr.finite, "all values finite");
    add("value_nonnegative", fr.min_value >= -1e-9, fmt("min w %.3g", fr.min_value));
    add("qvi_obstacle", fr.max_obstacle_gap <= 1e-8, fmt("max (Hw - w) %.3g", fr.max_obstacle_gap));
    add("qvi_continuation_residual", solved.meta.max_continuation_residual <= so.tol_policy,
        fmt("%.3g", solved.meta.max_continuation_residual));
    add("monotone_in_r", fr.max_r_decrease <= 1e-8, fmt("max decrease %.3g", fr.max_r_decrease));
    add("monotone_in_s", fr.max_s_decrease <= 1e-8, fmt("max decrease %.3g", fr.max_s_decrease));
    add("growth_bound", fr.max_growth_ratio <= kGrowthConstant,
        fmt("max w/(1+r^4+p^4+q^4) %.4f, C = %.2f", fr.max_growth_ratio, kGrowthConstant));
    add("r0_plane_continue", fr.r0_harvest_labels == 0, std::to_string(fr.r0_harvest_labels) + " intervention labels");
    add("terminal_order_zero", fr.terminal_positive_orders == 0,
        std::to_string(fr.terminal_positive_orders) + " terminal nodes with a positive order");

    const State z0 = cfg.sim.z0;
    {
        State shifted = z0;
        shifted.x += 5.0;
        const double a = field_value(field, 0, 0, field.level_of(cfg.sim.pending0), z0);
        const double b = field_value(field, 0, 0, field.level_of(cfg.sim.pending0), shifted);
        add("cash_translation", std::abs(b - a - 5.0) <= 1e-12, fmt("shift error %.3g", b - a - 5.0));
    }

    // Monte Carlo
    SimOptions sim;
    sim.n_paths = options.n_paths;
    sim.seed = options.seed;
    sim.n_sub = cfg.sim.n_sub;
    sim.threads = options.threads;
    const auto with_filter = simulate(field, z0, cfg.sim.pending0, sim, params);
    sim.profitable_filter = false;
    const auto without = simulate(field, z0, cfg.sim.pending0, sim, params);
    add("admissibility", with_filter.admissibility_violations == 0 && without.admissibility_violations == 0,
        std::to_string(with_filter.admissibility_violations + without.admissibility_violations) + " violations");
    const double budget = 0.05 * std::abs(with_filter.pde_value);
    add("policy_below_value", with_filter.estimate <= with_filter.pde_value + 3 * with_filter.std_error + budget,
        fmt("J_MC %.6f, v %.6f, SE %.2g", with_filter.estimate, with_filter.pde_value, with_filter.std_error));
    {
        double se2 = 0.0;
        const double n = static_cast<double>(with_filter.payoffs.size());
        const double mean_d = with_filter.estimate - without.estimate;
        for (std::size_t i = 0; i < with_filter.payoffs.size(); ++i) {
            const double d = with_filter.payoffs[i] - without.payoffs[i] - mean_d;
            se2 += d * d;
        }
        const double se = n > 1 ? std::sqrt(se2 / (n - 1) / n) : 0.0;
        add("profitable_filter", with_filter.estimate >= without.estimate - 3 * se,
            fmt("J(filter) %.6f, J(no filter) %.6f, SE %.2g", with_filter.estimate, without.estimate, se));
    }
    {
        const auto dpp = dpp_check(field, z0, cfg.sim.pending0, StopAtFirstDate{}, options.n_paths, options.seed,
                                   params, cfg.sim.n_sub, 0.02, options.threads);
        add("dpp_first_date", dpp.holds,
            fmt("v %.6f, E[v(theta)] %.6f, SE %.2g", dpp.value_now, dpp.mean_later, dpp.std_error));
    }
    if (!deterministic) {
        const auto cmp = compare_sampler_with_euler(0.5, 1.0, 64, 1024, 20000, options.seed, params);
        add("sampler_vs_euler", cmp.within(3.0),
            fmt("closed form %.6f, Euler %.6f, combined SE %.2g", cmp.mean_a, cmp.mean_b, cmp.combined_se));
    }

    if (deterministic) {
        oracle::ChainDp dp(params, grid);
        const double want = dp.value(z0.r, z0.p);
        const double got = field_value(field, 0, 0, field.level_of(cfg.sim.pending0), z0) - z0.x;
        add("deterministic_dp_oracle", std::abs(want - got) <= 1e-6, fmt("solver %.10f, oracle %.10f", got, want));
        SimOptions one;
        one.n_paths = 1;
        one.seed = options.seed;
        one.n_sub = cfg.sim.n_sub;
        const auto rep = simulate(field, z0, cfg.sim.pending0, one, params);
        add("deterministic_policy_value", rep.estimate <= rep.pde_value + 0.05 * std::abs(rep.pde_value),
            fmt("J %.8f, v %.8f", rep.estimate, rep.pde_value));
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    add("check_runtime", elapsed < 120.0, fmt("%.1f s", elapsed));
    return out;
}

}  // namespace forest
