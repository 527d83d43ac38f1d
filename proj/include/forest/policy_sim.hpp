#pragma once

// Strategy extraction from a solved field, forward Monte Carlo of that
// strategy, the no-intervention dynamic-programming check, and summaries of
// region maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "forest/impulse.hpp"
#include "forest/model.hpp"
#include "forest/parallel.hpp"
#include "forest/rng.hpp"
#include "forest/solver.hpp"

namespace forest {

// ---------------------------------------------------------------------------
// Action extraction
// ---------------------------------------------------------------------------

enum class ActionKind : std::uint8_t { Continue, Harvest, Plant };

struct Action {
    ActionKind kind = ActionKind::Continue;
    double harvest = 0.0;  // harvested quantity (fused with the order at a date)
    double plant = 0.0;    // renewal order at a date
};

/// Counters for lookups that left the grid box.
struct LookupClamps {
    long s_clamps = 0;
};

namespace detail {

inline double lookup_log_price(double p, const GridSpec& grid, LookupClamps* clamps) {
    const double s = std::log(p);
    if (s < grid.s_min || s > grid.s_max) {
        if (clamps) ++clamps->s_clamps;
        return std::clamp(s, grid.s_min, grid.s_max);
    }
    return s;
}

inline std::vector<double> pending_quantities(const PendingOrders& pending) {
    std::vector<double> out;
    for (const auto& e : pending.entries()) out.push_back(e.quantity);
    return out;
}

}  // namespace detail

/// Interior-time harvest test at solver step (k, step): harvest a* when the
/// interpolated value is within tol_trigger (1 + |w|) of the best harvest.
inline Action harvest_action(const ValueField& field, int k, int step, int level, const State& z,
                             const ModelParams& params, double tol_trigger = 1e-7, LookupClamps* clamps = nullptr) {
    if (!(z.r > 0.0)) return {};
    const GridSpec& grid = field.grid();
    const auto slice = field.values(k, step, level);
    const double s = detail::lookup_log_price(z.p, grid, clamps);
    const double w = interpolate(slice, grid, z.r, s);
    const auto amounts = HarvestAmounts::at(std::min(z.r, grid.r_max), grid.h_r());
    double best = -std::numeric_limits<double>::infinity();
    double best_a = 0.0;
    for (int i = 0; i < amounts.count; ++i) {
        const double a = amounts.amount(i);
        const double value = harvest_net_payoff(z.p, a, params) + interpolate(slice, grid, std::max(z.r - a, 0.0), s);
        if (value > best) {
            best = value;
            best_a = a;
        }
    }
    if (amounts.count > 0 && w <= best + tol_trigger * (1.0 + std::abs(w))) {
        // stock above r_max is looked up at r_max; the excess goes with the harvest
        if (z.r > grid.r_max) best_a += z.r - grid.r_max;
        return {ActionKind::Harvest, std::min(best_a, z.r), 0.0};
    }
    return {};
}

/// Renewal decision at date `date` (1..n) for the pre-date state; the last
/// date uses liquidation as the post-date value.
inline Action date_action(const ValueField& field, int date, const State& z, const PendingOrders& pending,
                          const ModelParams& params, double tol_tie = 1e-10, LookupClamps* clamps = nullptr) {
    const GridSpec& grid = field.grid();
    const Schedule& schedule = field.schedule();
    const auto quantities = detail::pending_quantities(pending);
    const int pre_level = field.level_of(quantities);
    const double s = detail::lookup_log_price(z.p, grid, clamps);
    const double r = std::min(z.r, grid.r_max);
    const auto amounts = HarvestAmounts::at(r, grid.h_r());
    DateCandidate best;
    if (date == schedule.n_dates()) {
        best = best_date_decision(date, pre_level, r, amounts, z.p, z.q, grid, schedule, params, tol_tie,
                                  [&](int, double r_after) {
                                      return liquidation_gain(std::min(r_after, grid.r_max), z.p, params);
                                  });
    } else {
        best = best_date_decision(date, pre_level, r, amounts, z.p, z.q, grid, schedule, params, tol_tie,
                                  [&](int post_level, double r_after) {
                                      return interpolate(field.values(date, 0, post_level), grid,
                                                         std::min(r_after, grid.r_max), s);
                                  });
    }
    Action out{ActionKind::Plant, best.harvest_amount, grid.e(best.plant_level)};
    if (out.harvest > 0.0 && z.r > grid.r_max) out.harvest += z.r - grid.r_max;
    return out;
}

/// Optimal action at time t for state z with pending orders `pending`.
/// Renewal dates (t = t_i, i >= 1) return the date decision; other times the
/// harvest test on the solver step nearest to t.
inline Action extract_action(const ValueField& field, double t, const State& z, const PendingOrders& pending,
                             const ModelParams& params, double tol_trigger = 1e-7) {
    const Schedule& schedule = field.schedule();
    if (t < -1e-12 || t > schedule.horizon() + 1e-12)
        throw std::out_of_range("extract_action: time outside the solved horizon");
    if (!(z.r >= 0.0)) throw std::out_of_range("extract_action: negative resource");
    const int date = schedule.date_count(t);
    if (date >= 1 && std::abs(t - schedule.date(date)) < 1e-9 * std::max(1.0, t))
        return date_action(field, date, z, pending, params);
    const int k = std::min(date, schedule.n_dates() - 1);
    const int step = std::clamp(static_cast<int>(std::lround((t - schedule.date(k)) / field.dt())), 0,
                                field.steps() - 1);
    const auto quantities = detail::pending_quantities(pending);
    return harvest_action(field, k, step, field.level_of(quantities), z, params, tol_trigger);
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

struct SimOptions {
    long n_paths = 10000;
    std::uint64_t seed = 42;
    int n_sub = 32;
    int threads = 1;
    bool profitable_filter = true;
    /// never harvest, order nothing
    bool never_intervene = false;
    double tol_trigger = 1e-7;
    double tol_tie = 1e-10;
    /// number of leading paths whose step-by-step trace is kept
    long record_paths = 0;
};

struct PathEvent {
    long path = 0;
    double time = 0.0;
    double r = 0.0;
    double p = 0.0;
    double q = 0.0;
    std::string action;
    double amount = 0.0;
};

struct SimReport {
    long n_paths = 0;
    std::uint64_t seed = 0;
    double estimate = 0.0;
    double std_error = 0.0;
    double pde_value = 0.0;
    double rel_gap = 0.0;
    std::vector<long> harvest_count_hist;  // [count] -> paths
    double mean_harvests = 0.0;
    double mean_harvest_time = 0.0;
    std::vector<double> mean_renewal;  // per date 1..n
    long admissibility_violations = 0;
    long simultaneous_plant_harvest = 0;
    long skipped_unprofitable = 0;
    long r_clamps = 0;
    long s_clamps = 0;
    std::vector<double> payoffs;  // per path, index order
    std::vector<PathEvent> events;
};

namespace detail {

struct PathOutcome {
    double payoff = 0.0;
    std::vector<double> harvest_times;
    std::vector<double> renewals;
    long violations = 0;
    long simultaneous = 0;
    long skipped = 0;
    long r_clamps = 0;
    long s_clamps = 0;
    std::vector<PathEvent> events;
};

/// Draws for one solver step: n_sub resource normals then one price normal.
struct StepNoise {
    std::vector<double> resource;
    double price = 0.0;
};

inline void advance(State& z, double dt, const StepNoise& noise, const ModelParams& params) {
    z.r = logistic_sample_end(z.r, dt, noise.resource, params);
    const double dw = std::sqrt(dt) * noise.price;
    z.p = gbm_step(z.p, dt, dw, params.mu, params.sigma);
    z.q = params.cost_equals_price ? z.p : gbm_step(z.q, dt, dw, params.rho_cost, params.varsigma);
}

inline void clamp_resource(State& z, const GridSpec& grid, long& counter) {
    if (z.r > grid.r_max) {
        z.r = grid.r_max;
        ++counter;
    }
}

inline PendingOrders initial_pending(const std::vector<double>& pending0, const Schedule& schedule,
                                     const ModelParams& params) {
    PendingOrders pending(schedule.m_delay(), params.K);
    const auto window = schedule.pending_window(0.0);
    if (static_cast<int>(pending0.size()) != window.size())
        throw std::invalid_argument("pending0 must list exactly the orders pending at t = 0 (" +
                                    std::to_string(window.size()) + ")");
    for (int i = 0; i < window.size(); ++i) pending.place(window.first + i, pending0[static_cast<std::size_t>(i)]);
    return pending;
}

inline PathOutcome simulate_path(const ValueField& field, const State& z0, const std::vector<double>& pending0,
                                 long path, const SimOptions& options, const ModelParams& params, bool record) {
    const GridSpec& grid = field.grid();
    const Schedule& schedule = field.schedule();
    const int n = schedule.n_dates();
    const double dt = field.dt();
    NormalStream rng(path_seed(options.seed, static_cast<std::uint64_t>(path)));
    StepNoise noise{std::vector<double>(static_cast<std::size_t>(options.n_sub)), 0.0};
    LookupClamps lookups;

    PathOutcome out;
    out.renewals.assign(static_cast<std::size_t>(n), 0.0);
    State z = z0;
    PendingOrders pending = initial_pending(pending0, schedule, params);

    auto log_event = [&](double t, const char* what, double amount) {
        if (record) out.events.push_back({path, t, z.r, z.p, z.q, what, amount});
    };
    auto do_harvest = [&](double t, double a) -> bool {
        if (a > z.r + 1e-12 || a < 0.0) {
            ++out.violations;
            return false;
        }
        if (options.profitable_filter && harvest_net_payoff(z.p, a, params) < 0.0) {
            ++out.skipped;
            log_event(t, "SKIP", a);
            return false;
        }
        z = harvest_op(z, std::min(a, z.r), params);
        out.harvest_times.push_back(t);
        log_event(t, "HARVEST", a);
        return true;
    };
    auto date_event = [&](int date) {
        const double t = schedule.date(date);
        Action act;
        if (!options.never_intervene) act = date_action(field, date, z, pending, params, options.tol_tie, &lookups);
        bool harvested = false;
        if (act.harvest > 0.0) harvested = do_harvest(t, act.harvest);
        if (harvested && act.plant > 0.0) ++out.simultaneous;
        z = apply_date(z, date, pending, act.plant, schedule, params);
        clamp_resource(z, grid, out.r_clamps);
        out.renewals[static_cast<std::size_t>(date - 1)] = act.plant;
        log_event(t, "PLANT", act.plant);
    };

    for (int k = 0; k < n; ++k) {
        for (int step = 0; step < grid.n_t; ++step) {
            const double t = field.time(k, step);
            if (step == 0 && k >= 1) {
                date_event(k);
            } else if (!options.never_intervene) {
                const int level = field.level_of(pending_quantities(pending));
                const Action act = harvest_action(field, k, step, level, z, params, options.tol_trigger, &lookups);
                if (act.kind == ActionKind::Harvest) do_harvest(t, act.harvest);
            }
            if (z.r < 0.0) ++out.violations;
            rng.fill(noise.resource.begin(), noise.resource.end());
            noise.price = rng();
            advance(z, dt, noise, params);
            if (record) log_event(field.time(k, step + 1), "CONTINUE", 0.0);
        }
    }
    date_event(n);
    out.payoff = liquidation(z, params);
    out.s_clamps = lookups.s_clamps;
    return out;
}

}  // namespace detail

/// Monte Carlo value of the extracted strategy from (0, z0, pending0).
inline SimReport simulate(const ValueField& field, const State& z0, const std::vector<double>& pending0,
                          const SimOptions& options, const ModelParams& params) {
    if (options.n_paths < 1) throw std::invalid_argument("simulate: n_paths must be >= 1");
    if (options.n_sub < 1) throw std::invalid_argument("simulate: n_sub must be >= 1");
    if (!z0.admissible()) throw std::invalid_argument("simulate: initial state violates r >= 0, p > 0, q > 0");
    const auto& grid = field.grid();
    if (z0.r > grid.r_max) throw std::out_of_range("simulate: initial resource above r_max");

    const auto n = static_cast<std::size_t>(options.n_paths);
    std::vector<detail::PathOutcome> outcomes(n);
    parallel_for(n, options.threads, [&](std::size_t i) {
        outcomes[i] = detail::simulate_path(field, z0, pending0, static_cast<long>(i), options, params,
                                            static_cast<long>(i) < options.record_paths);
    });

    SimReport rep;
    rep.n_paths = options.n_paths;
    rep.seed = options.seed;
    rep.mean_renewal.assign(static_cast<std::size_t>(field.schedule().n_dates()), 0.0);
    rep.payoffs.reserve(n);
    double sum = 0.0;
    double harvest_time_sum = 0.0;
    long harvest_total = 0;
    for (const auto& o : outcomes) {
        rep.payoffs.push_back(o.payoff);
        sum += o.payoff;
        const auto count = o.harvest_times.size();
        if (rep.harvest_count_hist.size() <= count) rep.harvest_count_hist.resize(count + 1, 0);
        ++rep.harvest_count_hist[count];
        harvest_total += static_cast<long>(count);
        for (double t : o.harvest_times) harvest_time_sum += t;
        for (std::size_t i = 0; i < o.renewals.size(); ++i) rep.mean_renewal[i] += o.renewals[i];
        rep.admissibility_violations += o.violations;
        rep.simultaneous_plant_harvest += o.simultaneous;
        rep.skipped_unprofitable += o.skipped;
        rep.r_clamps += o.r_clamps;
        rep.s_clamps += o.s_clamps;
        rep.events.insert(rep.events.end(), o.events.begin(), o.events.end());
    }
    const double paths = static_cast<double>(n);
    rep.estimate = sum / paths;
    double sq = 0.0;
    for (double v : rep.payoffs) sq += (v - rep.estimate) * (v - rep.estimate);
    rep.std_error = n > 1 ? std::sqrt(sq / (paths - 1.0) / paths) : 0.0;
    rep.mean_harvests = static_cast<double>(harvest_total) / paths;
    rep.mean_harvest_time = harvest_total > 0 ? harvest_time_sum / static_cast<double>(harvest_total) : 0.0;
    for (double& v : rep.mean_renewal) v /= paths;

    const int level = field.level_of(pending0);
    rep.pde_value = field_value(field, 0, 0, level, z0);
    rep.rel_gap = std::abs(rep.estimate - rep.pde_value) / std::max(std::abs(rep.pde_value), 1e-12);
    return rep;
}

// ---------------------------------------------------------------------------
// Dynamic programming check
// ---------------------------------------------------------------------------

struct StopAtFirstDate {};
struct StopAtTime {
    double t = 0.0;
};
struct StopOnBandExit {
    double r_low = 0.0;
    double r_high = 1.0;
};
using StoppingRule = std::variant<StopAtFirstDate, StopAtTime, StopOnBandExit>;

struct DppReport {
    double value_now = 0.0;   // v(0, z0, d0)
    double mean_later = 0.0;  // sample mean of v(theta, Z_theta, d_theta)
    double std_error = 0.0;
    double tol_disc = 0.0;
    bool holds = false;
};

/// Runs the no-intervention strategy up to the stopping rule (checked on the
/// solver time grid) and compares v at the start with the mean of v at the
/// stopping time: v(0) >= mean - 3 SE - tol_disc, tol_disc = budget * |v(0)|.
inline DppReport dpp_check(const ValueField& field, const State& z0, const std::vector<double>& pending0,
                           const StoppingRule& rule, long n_paths, std::uint64_t seed, const ModelParams& params,
                           int n_sub = 32, double budget = 0.02, int threads = 1) {
    const GridSpec& grid = field.grid();
    const Schedule& schedule = field.schedule();
    const int n = schedule.n_dates();
    const double dt = field.dt();
    const long total_steps = static_cast<long>(n) * grid.n_t;

    // stop index on the global step grid; total_steps means T
    long fixed_stop = -1;
    if (std::holds_alternative<StopAtFirstDate>(rule)) fixed_stop = std::min<long>(grid.n_t, total_steps);
    if (const auto* at = std::get_if<StopAtTime>(&rule)) {
        if (at->t < 0.0 || at->t > schedule.horizon() + 1e-12)
            throw std::out_of_range("dpp_check: stopping time outside [0, T]");
        fixed_stop = std::clamp<long>(std::lround(at->t / dt), 0, total_steps);
    }
    const auto* band = std::get_if<StopOnBandExit>(&rule);

    std::vector<double> values(static_cast<std::size_t>(n_paths));
    parallel_for(values.size(), threads, [&](std::size_t path) {
        NormalStream rng(path_seed(seed, path));
        detail::StepNoise noise{std::vector<double>(static_cast<std::size_t>(n_sub)), 0.0};
        State z = z0;
        PendingOrders pending = detail::initial_pending(pending0, schedule, params);
        long clamps = 0;
        for (long g = 0;; ++g) {
            const int k = static_cast<int>(std::min<long>(g / grid.n_t, n - 1));
            const int step = static_cast<int>(g - static_cast<long>(k) * grid.n_t);
            const bool at_date = g > 0 && g % grid.n_t == 0;
            if (at_date) {
                z = apply_date(z, static_cast<int>(g / grid.n_t), pending, 0.0, schedule, params);
                detail::clamp_resource(z, grid, clamps);
            }
            bool stop = g == fixed_stop || g == total_steps;
            if (band && (z.r < band->r_low || z.r > band->r_high)) stop = true;
            if (stop) {
                if (g == total_steps) {
                    values[path] = liquidation(z, params);
                } else {
                    const int level = field.level_of(detail::pending_quantities(pending));
                    values[path] = field_value(field, k, step, level, z);
                }
                break;
            }
            rng.fill(noise.resource.begin(), noise.resource.end());
            noise.price = rng();
            detail::advance(z, dt, noise, params);
        }
    });

    DppReport rep;
    rep.value_now = field_value(field, 0, 0, field.level_of(pending0), z0);
    const double count = static_cast<double>(values.size());
    rep.mean_later = std::accumulate(values.begin(), values.end(), 0.0) / count;
    double sq = 0.0;
    for (double v : values) sq += (v - rep.mean_later) * (v - rep.mean_later);
    rep.std_error = values.size() > 1 ? std::sqrt(sq / (count - 1.0) / count) : 0.0;
    rep.tol_disc = budget * std::abs(rep.value_now);
    rep.holds = rep.value_now >= rep.mean_later - 3.0 * rep.std_error - rep.tol_disc;
    return rep;
}

// ---------------------------------------------------------------------------
// Region metrics
// ---------------------------------------------------------------------------

struct LabelSlice {
    std::span<const std::uint8_t> labels;
    int n_r = 0;
    int n_s = 0;

    Region at(int i_r, int i_s) const {
        return static_cast<Region>(labels[static_cast<std::size_t>(i_r) * n_s + i_s]);
    }
};

struct RegionMetrics {
    std::array<long, 4> counts{};  // indexed by Region
    long harvest_area = 0;         // HARVEST + PLANT_AND_HARVEST
    long plant_area = 0;           // PLANT + PLANT_AND_HARVEST
    long plant_and_harvest = 0;
    long harvest_area_lower_s = 0;  // restricted to i_s < (n_s - 1) / 2
    long plant_area_lower_s = 0;
    int plant_max_r_index = -1;
    long harvest_boundary_nodes = 0;   // harvest nodes with a non-harvest s-neighbour
    long monotonicity_violations = 0;  // harvest nodes whose next-higher s node does not harvest
};

inline RegionMetrics region_metrics(const LabelSlice& slice) {
    RegionMetrics m;
    const int lower_s = (slice.n_s - 1) / 2;
    auto harvests = [](Region r) { return r == Region::Harvest || r == Region::PlantAndHarvest; };
    auto plants = [](Region r) { return r == Region::Plant || r == Region::PlantAndHarvest; };
    for (int i = 0; i < slice.n_r; ++i) {
        for (int j = 0; j < slice.n_s; ++j) {
            const Region r = slice.at(i, j);
            ++m.counts[static_cast<std::size_t>(r)];
            if (harvests(r)) {
                ++m.harvest_area;
                if (j < lower_s) ++m.harvest_area_lower_s;
                const bool up_harvests = j + 1 >= slice.n_s || harvests(slice.at(i, j + 1));
                const bool down_harvests = j == 0 || harvests(slice.at(i, j - 1));
                if (!up_harvests) ++m.monotonicity_violations;
                if (!up_harvests || !down_harvests) ++m.harvest_boundary_nodes;
            }
            if (plants(r)) {
                ++m.plant_area;
                if (j < lower_s) ++m.plant_area_lower_s;
                m.plant_max_r_index = std::max(m.plant_max_r_index, i);
            }
            if (r == Region::PlantAndHarvest) ++m.plant_and_harvest;
        }
    }
    return m;
}

}  // namespace forest
