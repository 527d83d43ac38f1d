#pragma once

// Backward sweep for the reduced value w = v - x:
//
//   terminal jump at T-  ->  interval n-1  ->  date jump at t_{n-1}  ->  ...  ->  interval 0
//
// Inside an interval each implicit step solves the harvest quasi-variational
// inequality min{(I - dt A) w - w_next, w - H w} = 0 by policy iteration.
// At a renewal date the pre-date value is the best renewal order (optionally
// fused with one harvest) against the post-date value.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "forest/chain.hpp"
#include "forest/impulse.hpp"
#include "forest/model.hpp"
#include "forest/parallel.hpp"

namespace forest {

enum class Region : std::uint8_t {
    Continue = 0,
    Harvest = 1,
    Plant = 2,
    PlantAndHarvest = 3,
};

inline const char* region_name(Region r) noexcept {
    switch (r) {
        case Region::Continue: return "CONTINUE";
        case Region::Harvest: return "HARVEST";
        case Region::Plant: return "PLANT";
        case Region::PlantAndHarvest: return "PLANT_AND_HARVEST";
    }
    return "?";
}

inline int int_pow(int base, int exp) {
    int out = 1;
    for (int i = 0; i < exp; ++i) out *= base;
    return out;
}

/// Pending orders on the quantity grid are encoded as a mixed-radix index:
/// digit j (oldest first) is the quantity level of the j-th pending order.
inline int pending_digit(int level, int j, int n_e) { return (level / int_pow(n_e, j)) % n_e; }

/// Grid-sampled reduced value, region labels and impulse amounts for every
/// (interval, time step, pending level, resource, log-price). Step n_t of
/// interval k is the left limit t_{k+1}- and carries the date decisions.
class ValueField {
public:
    ValueField() = default;
    ValueField(const GridSpec& grid, const Schedule& schedule) : grid_(grid), schedule_(schedule) {
        const std::size_t n = grid.nodes();
        for (int k = 0; k < schedule.n_dates(); ++k) {
            const int levels = int_pow(grid.n_e, schedule.pending_count(k));
            const std::size_t cells = static_cast<std::size_t>(grid.n_t + 1) * static_cast<std::size_t>(levels) * n;
            Interval iv;
            iv.levels = levels;
            iv.values.assign(cells, 0.0);
            iv.labels.assign(cells, static_cast<std::uint8_t>(Region::Continue));
            iv.harvest_steps.assign(cells, 0);
            iv.plant_levels.assign(cells, 0);
            intervals_.push_back(std::move(iv));
        }
    }

    const GridSpec& grid() const noexcept { return grid_; }
    const Schedule& schedule() const noexcept { return schedule_; }
    int intervals() const noexcept { return static_cast<int>(intervals_.size()); }
    int steps() const noexcept { return grid_.n_t; }
    int levels(int k) const { return intervals_.at(static_cast<std::size_t>(k)).levels; }
    double dt() const noexcept { return schedule_.spacing() / grid_.n_t; }
    double time(int k, int step) const noexcept { return schedule_.date(k) + step * dt(); }

    std::span<double> values(int k, int step, int level) { return slice(intervals_[k].values, k, step, level); }
    std::span<const double> values(int k, int step, int level) const {
        return slice(intervals_[k].values, k, step, level);
    }
    std::span<std::uint8_t> labels(int k, int step, int level) { return slice(intervals_[k].labels, k, step, level); }
    std::span<const std::uint8_t> labels(int k, int step, int level) const {
        return slice(intervals_[k].labels, k, step, level);
    }
    /// Harvest amounts in units of h_r.
    std::span<std::uint16_t> harvest_steps(int k, int step, int level) {
        return slice(intervals_[k].harvest_steps, k, step, level);
    }
    std::span<const std::uint16_t> harvest_steps(int k, int step, int level) const {
        return slice(intervals_[k].harvest_steps, k, step, level);
    }
    /// Renewal orders as quantity-grid levels (date slices only).
    std::span<std::uint8_t> plant_levels(int k, int step, int level) {
        return slice(intervals_[k].plant_levels, k, step, level);
    }
    std::span<const std::uint8_t> plant_levels(int k, int step, int level) const {
        return slice(intervals_[k].plant_levels, k, step, level);
    }

    /// Pending level index for quantities given oldest first (snapped to the quantity grid).
    int level_of(std::span<const double> pending_quantities) const {
        int level = 0;
        int radix = 1;
        for (double e : pending_quantities) {
            const int l = grid_.K > 0.0 ? static_cast<int>(std::lround(e / grid_.h_e())) : 0;
            level += std::clamp(l, 0, grid_.n_e - 1) * radix;
            radix *= grid_.n_e;
        }
        return level;
    }

private:
    struct Interval {
        int levels = 1;
        std::vector<double> values;
        std::vector<std::uint8_t> labels;
        std::vector<std::uint16_t> harvest_steps;
        std::vector<std::uint8_t> plant_levels;
    };

    template <typename T>
    std::span<T> slice(std::vector<T>& data, int k, int step, int level) const {
        const std::size_t n = grid_.nodes();
        const std::size_t offset =
            (static_cast<std::size_t>(step) * static_cast<std::size_t>(intervals_[k].levels) + level) * n;
        return {data.data() + offset, n};
    }
    template <typename T>
    std::span<const T> slice(const std::vector<T>& data, int k, int step, int level) const {
        const std::size_t n = grid_.nodes();
        const std::size_t offset =
            (static_cast<std::size_t>(step) * static_cast<std::size_t>(intervals_[k].levels) + level) * n;
        return {data.data() + offset, n};
    }

    GridSpec grid_{};
    Schedule schedule_{1.0, 1, 0};
    std::vector<Interval> intervals_;
};

struct SolverOptions {
    double tol_policy = 1e-8;
    int max_iters = 200;
    double tol_tie = 1e-10;
    int threads = 1;

    HowardOptions howard() const { return {tol_policy, max_iters, tol_tie}; }
};

struct SolveMeta {
    long howard_iterations = 0;
    int max_step_iterations = 0;
    double max_continuation_residual = 0.0;
    long factorizations = 0;
    long clamp_count = 0;
    double wall_seconds = 0.0;
};

struct SolveResult {
    ValueField field;
    SolveMeta meta;
};

// ---------------------------------------------------------------------------
// Harvest supremum
// ---------------------------------------------------------------------------

struct HarvestSup {
    std::vector<double> values;
    std::vector<std::uint16_t> argmax_steps;  // harvest amount in units of h_r
};

/// H w at every node: max over a in {0, h_r, ..., r} (or from h_r when
/// `include_zero` is false) of (e^s - c1) a - c2 + w(r - a, s). Ties go to the
/// smaller amount. Nodes with no admissible amount get -inf.
inline HarvestSup harvest_sup(std::span<const double> w, const GridSpec& grid, const ModelParams& params,
                              bool include_zero = true) {
    HarvestSup out;
    out.values.assign(grid.nodes(), -std::numeric_limits<double>::infinity());
    out.argmax_steps.assign(grid.nodes(), 0);
    const double h = grid.h_r();
    for (int j = 0; j < grid.n_s; ++j) {
        const double margin = std::exp(grid.s(j)) - params.c1;
        // max over source rows i' <= i - first of w(i') - margin * i' * h; later rows win ties
        double best_shifted = -std::numeric_limits<double>::infinity();
        int best_row = -1;
        const int first = include_zero ? 0 : 1;
        for (int i = 0; i < grid.n_r; ++i) {
            const int candidate = i - first;
            if (candidate >= 0) {
                const double shifted = w[grid.index(candidate, j)] - margin * candidate * h;
                if (shifted >= best_shifted) {
                    best_shifted = shifted;
                    best_row = candidate;
                }
            }
            if (best_row < 0) continue;
            const int steps = i - best_row;
            const std::size_t idx = grid.index(i, j);
            out.values[idx] = margin * steps * h - params.c2 + w[grid.index(best_row, j)];
            out.argmax_steps[idx] = static_cast<std::uint16_t>(steps);
        }
    }
    return out;
}

/// discrete_harvest_sup: H w including the zero-amount harvest.
inline HarvestSup discrete_harvest_sup(std::span<const double> w, const GridSpec& grid, const ModelParams& params) {
    return harvest_sup(w, grid, params, true);
}

// ---------------------------------------------------------------------------
// Date operators
// ---------------------------------------------------------------------------

struct DateSlices {
    std::vector<std::vector<double>> values;        // [pre level][node]
    std::vector<std::vector<std::uint8_t>> plant;   // chosen order level
    std::vector<std::vector<std::uint16_t>> harvest;  // fused harvest steps, 0 = none
    std::vector<std::vector<std::uint8_t>> labels;
    long clamp_count = 0;
};

struct DateCandidate {
    double value = -std::numeric_limits<double>::infinity();
    int plant_level = 0;
    double harvest_amount = 0.0;
    bool clamped = false;
};

/// Candidate harvest amounts at stock r: every amount that lands exactly on a
/// resource node below r, i.e. a = r - r_j for r_j < r. On a node these are the
/// multiples of h_r.
struct HarvestAmounts {
    double offset = 0.0;  // r - floor(r / h) h
    int count = 0;        // number of candidate amounts
    double h = 0.0;

    static HarvestAmounts at(double r, double h) {
        HarvestAmounts out;
        out.h = h;
        if (!(r > 0.0)) return out;
        double floor_steps = std::floor(r / h + 1e-9);
        out.offset = std::max(r - floor_steps * h, 0.0);
        if (out.offset < 1e-12 * h) out.offset = 0.0;
        out.count = static_cast<int>(floor_steps) + (out.offset > 0.0 ? 1 : 0);
        return out;
    }
    /// i-th smallest amount, i in [0, count).
    double amount(int i) const noexcept { return offset > 0.0 ? offset + i * h : (i + 1) * h; }
};

/// Best date decision at one pre-date state (r, p, q) with pending level
/// `pre_level`. `post(post_level, r_after)` is the reduced post-date value at
/// the state's log-price. Ties keep the smaller order and the unfused branch.
template <typename Post>
DateCandidate best_date_decision(int k, int pre_level, double r, const HarvestAmounts& amounts, double p, double q,
                                 const GridSpec& grid, const Schedule& schedule, const ModelParams& params,
                                 double tol_tie, Post&& post) {
    const int m = schedule.m_delay();
    const int n_e = grid.n_e;
    const bool matures = m > 0 && schedule.matures_at(k);
    const double e_old = matures ? grid.e(pending_digit(pre_level, 0, n_e)) : 0.0;
    const int post_base = matures ? pre_level / n_e : pre_level;
    const int post_radix = m == 0 ? 0 : int_pow(n_e, (matures ? m : k) - 1);

    DateCandidate best;
    auto consider = [&](double harvested, double cash, double r_start) {
        for (int l = 0; l < n_e; ++l) {
            const double e_new = grid.e(l);
            const double matured = m == 0 ? params.growth(e_new) : params.growth(e_old);
            const double r_after = r_start + matured + params.g0;
            const double value = cash - (q + params.c3) * e_new + post(post_base + l * post_radix, r_after);
            if (value > best.value + tol_tie) best = {value, l, harvested, r_after > grid.r_max};
        }
    };
    consider(0.0, 0.0, r);
    for (int i = 0; i < amounts.count; ++i) {
        const double a = amounts.amount(i);
        consider(a, (p - params.c1) * a - params.c2, std::max(r - a, 0.0));
    }
    return best;
}

inline Region date_region(const DateCandidate& c) noexcept {
    if (c.harvest_amount > 0.0) return c.plant_level > 0 ? Region::PlantAndHarvest : Region::Harvest;
    return c.plant_level > 0 ? Region::Plant : Region::Continue;
}

template <typename Post>
DateSlices date_operator(int k, int pre_levels, const GridSpec& grid, const Schedule& schedule,
                         const ModelParams& params, double tol_tie, int threads, Post&& post) {
    DateSlices out;
    const std::size_t n = grid.nodes();
    out.values.assign(static_cast<std::size_t>(pre_levels), std::vector<double>(n));
    out.plant.assign(static_cast<std::size_t>(pre_levels), std::vector<std::uint8_t>(n));
    out.harvest.assign(static_cast<std::size_t>(pre_levels), std::vector<std::uint16_t>(n));
    out.labels.assign(static_cast<std::size_t>(pre_levels), std::vector<std::uint8_t>(n));
    std::vector<long> clamps(static_cast<std::size_t>(pre_levels), 0);
    parallel_for(static_cast<std::size_t>(pre_levels), threads, [&](std::size_t level) {
        for (int i_r = 0; i_r < grid.n_r; ++i_r) {
            for (int i_s = 0; i_s < grid.n_s; ++i_s) {
                const double p = std::exp(grid.s(i_s));
                const auto best = best_date_decision(
                    k, static_cast<int>(level), grid.r(i_r), HarvestAmounts::at(grid.r(i_r), grid.h_r()), p, p, grid,
                    schedule, params, tol_tie,
                    [&](int post_level, double r_after) { return post(post_level, r_after, i_s); });
                const std::size_t idx = grid.index(i_r, i_s);
                out.values[level][idx] = best.value;
                out.plant[level][idx] = static_cast<std::uint8_t>(best.plant_level);
                out.harvest[level][idx] = static_cast<std::uint16_t>(std::lround(best.harvest_amount / grid.h_r()));
                out.labels[level][idx] = static_cast<std::uint8_t>(date_region(best));
                if (best.clamped) ++clamps[level];
            }
        }
    });
    for (long c : clamps) out.clamp_count += c;
    return out;
}

/// Reduced value at T-: best renewal at T (optionally after one harvest)
/// followed by liquidation, for every pending level of the last interval.
inline DateSlices terminal_slice(const GridSpec& grid, const Schedule& schedule, const ModelParams& params,
                                 double tol_tie = 1e-10, int threads = 1) {
    const int k = schedule.n_dates();
    const int pre_levels = int_pow(grid.n_e, schedule.pending_count(k - 1));
    return date_operator(k, pre_levels, grid, schedule, params, tol_tie, threads,
                         [&](int, double r_after, int i_s) {
                             return liquidation_gain(std::min(r_after, grid.r_max), std::exp(grid.s(i_s)), params);
                         });
}

/// Pre-date value at t_k- from the solved post-date value at t_k.
/// `post_levels[l]` is the slice of interval k at step 0 for pending level l.
inline DateSlices date_jump(std::span<const std::span<const double>> post_levels, int k, const GridSpec& grid,
                            const Schedule& schedule, const ModelParams& params, double tol_tie = 1e-10,
                            int threads = 1) {
    if (k < 1 || k >= schedule.n_dates()) throw std::invalid_argument("date_jump: k must be in [1, n_dates - 1]");
    const int pre_levels = int_pow(grid.n_e, schedule.pending_count(k - 1));
    return date_operator(k, pre_levels, grid, schedule, params, tol_tie, threads,
                         [&](int post_level, double r_after, int i_s) {
                             return interpolate_r(post_levels[static_cast<std::size_t>(post_level)], grid, r_after,
                                                  i_s);
                         });
}

// ---------------------------------------------------------------------------
// Interval solve
// ---------------------------------------------------------------------------

struct IntervalStats {
    long iterations = 0;
    int max_step_iterations = 0;
    double max_residual = 0.0;
    long factorizations = 0;
};

/// Steps interval k backward from its step n_t (already filled) to step 0.
inline IntervalStats qvi_interval_solve(ValueField& field, int k, std::span<const GeneratorRow> rows,
                                        const ModelParams& params, const SolverOptions& options = {}) {
    const GridSpec& grid = field.grid();
    const int levels = field.levels(k);
    const HowardOptions howard = options.howard();
    const double h = grid.h_r();
    std::vector<double> margins(static_cast<std::size_t>(grid.n_s));
    for (int j = 0; j < grid.n_s; ++j) margins[j] = std::exp(grid.s(j)) - params.c1;

    auto candidates = [&](std::span<const double> w, std::span<JumpCandidate> out) {
        const auto sup = harvest_sup(w, grid, params, false);
        for (int i = 0; i < grid.n_r; ++i) {
            for (int j = 0; j < grid.n_s; ++j) {
                const std::size_t idx = grid.index(i, j);
                const int steps = sup.argmax_steps[idx];
                if (i == 0 || steps == 0) {
                    out[idx] = JumpCandidate{};
                    continue;
                }
                const double payoff = margins[j] * steps * h - params.c2;
                out[idx] = {RowPolicy{static_cast<std::int32_t>(grid.index(i - steps, j)), payoff}, sup.values[idx]};
            }
        }
    };

    std::vector<IntervalStats> per_level(static_cast<std::size_t>(levels));
    parallel_for(static_cast<std::size_t>(levels), options.threads, [&](std::size_t lv) {
        const int level = static_cast<int>(lv);
        ImplicitSystem system(rows, grid, field.dt());
        std::vector<RowPolicy> policy;
        IntervalStats& stats = per_level[lv];
        for (int step = grid.n_t - 1; step >= 0; --step) {
            const auto next = field.values(k, step + 1, level);
            auto res = howard_solve(system, next, candidates, howard, std::move(policy));
            auto out = field.values(k, step, level);
            auto labels = field.labels(k, step, level);
            auto amounts = field.harvest_steps(k, step, level);
            const std::size_t ns = static_cast<std::size_t>(grid.n_s);
            for (std::size_t i = 0; i < grid.nodes(); ++i) {
                out[i] = res.values[i];
                const RowPolicy& p = res.policy[i];
                labels[i] = static_cast<std::uint8_t>(p.jumps() ? Region::Harvest : Region::Continue);
                amounts[i] = p.jumps() ? static_cast<std::uint16_t>(i / ns - static_cast<std::size_t>(p.target) / ns)
                                       : std::uint16_t{0};
            }
            stats.iterations += res.iterations;
            stats.max_step_iterations = std::max(stats.max_step_iterations, res.iterations);
            stats.max_residual = std::max(stats.max_residual, res.continuation_residual);
            policy = std::move(res.policy);
        }
        stats.factorizations = static_cast<long>(system.factorizations());
    });
    IntervalStats total;
    for (const auto& s : per_level) {
        total.iterations += s.iterations;
        total.max_step_iterations = std::max(total.max_step_iterations, s.max_step_iterations);
        total.max_residual = std::max(total.max_residual, s.max_residual);
        total.factorizations += s.factorizations;
    }
    return total;
}

inline void store_date_slices(ValueField& field, int k, int step, const DateSlices& slices) {
    for (int level = 0; level < static_cast<int>(slices.values.size()); ++level) {
        std::copy(slices.values[level].begin(), slices.values[level].end(), field.values(k, step, level).begin());
        std::copy(slices.labels[level].begin(), slices.labels[level].end(), field.labels(k, step, level).begin());
        std::copy(slices.harvest[level].begin(), slices.harvest[level].end(),
                  field.harvest_steps(k, step, level).begin());
        std::copy(slices.plant[level].begin(), slices.plant[level].end(), field.plant_levels(k, step, level).begin());
    }
}

/// Full backward sweep. Requires Q = P (the grid carries no separate cost axis).
inline SolveResult solve(const ModelParams& params, const GridSpec& grid, const SolverOptions& options = {}) {
    if (!params.cost_equals_price)
        throw std::invalid_argument("solve: the grid solver needs cost_equals_price (decoupled Q is Monte Carlo only)");
    const auto start = std::chrono::steady_clock::now();
    const Schedule schedule(params);
    SolveResult result{ValueField(grid, schedule), {}};
    ValueField& field = result.field;
    const auto rows = build_generator(params, grid);
    const int n = schedule.n_dates();

    auto terminal = terminal_slice(grid, schedule, params, options.tol_tie, options.threads);
    store_date_slices(field, n - 1, grid.n_t, terminal);
    result.meta.clamp_count += terminal.clamp_count;

    for (int k = n - 1; k >= 0; --k) {
        const auto stats = qvi_interval_solve(field, k, rows, params, options);
        result.meta.howard_iterations += stats.iterations;
        result.meta.max_step_iterations = std::max(result.meta.max_step_iterations, stats.max_step_iterations);
        result.meta.max_continuation_residual = std::max(result.meta.max_continuation_residual, stats.max_residual);
        result.meta.factorizations += stats.factorizations;
        if (k == 0) break;
        std::vector<std::span<const double>> post;
        for (int level = 0; level < field.levels(k); ++level) post.push_back(field.values(k, 0, level));
        const auto jump = date_jump(post, k, grid, schedule, params, options.tol_tie, options.threads);
        store_date_slices(field, k - 1, grid.n_t, jump);
        result.meta.clamp_count += jump.clamp_count;
    }
    result.meta.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

struct SliceRef {
    int k = 0;
    int step = 0;
};

/// Slice holding time t. A renewal date t_i (i >= 1) maps to the pre-date
/// slice (i - 1, n_t), which carries the date decisions.
inline SliceRef locate_slice(const ValueField& field, double t) {
    const Schedule& schedule = field.schedule();
    if (t < -1e-12 || t > schedule.horizon() + 1e-12) throw std::out_of_range("time outside [0, T]");
    const int date = schedule.date_count(t);
    if (date >= 1 && std::abs(t - schedule.date(date)) <= 1e-9 * std::max(1.0, t)) return {date - 1, field.steps()};
    const int k = std::min(date, schedule.n_dates() - 1);
    const int step = static_cast<int>(std::lround((t - schedule.date(k)) / field.dt()));
    return {k, std::clamp(step, 0, field.steps())};
}

/// v(t_k + step dt, z, d) = x + w.
inline double field_value(const ValueField& field, int k, int step, int level, const State& z) {
    const auto& grid = field.grid();
    const double s = std::clamp(std::log(z.p), grid.s_min, grid.s_max);
    return z.x + interpolate(field.values(k, step, level), grid, z.r, s);
}

}  // namespace forest
