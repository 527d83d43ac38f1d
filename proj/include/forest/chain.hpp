#pragma once

// Discretised state space (resource x log-price) and the locally consistent
// Markov-chain approximation of the uncontrolled generator. Time stepping is
// fully implicit; obstacle problems are solved by Howard policy iteration.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "forest/errors.hpp"
#include "forest/model.hpp"

namespace forest {

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

struct GridSpec {
    double r_max = 1.0;
    int n_r = 151;
    double s_min = 0.0;
    double s_max = 0.0;
    int n_s = 101;
    int n_e = 11;
    int n_t = 50;
    double K = 0.3;

    double h_r() const noexcept { return r_max / (n_r - 1); }
    double h_s() const noexcept { return (s_max - s_min) / (n_s - 1); }
    double h_e() const noexcept { return K / (n_e - 1); }
    double r(int i) const noexcept { return i * h_r(); }
    double s(int j) const noexcept { return s_min + j * h_s(); }
    double e(int l) const noexcept { return l * h_e(); }
    std::size_t nodes() const noexcept { return static_cast<std::size_t>(n_r) * static_cast<std::size_t>(n_s); }
    /// Row-major: resource outer, log-price inner.
    std::size_t index(int i_r, int i_s) const noexcept {
        return static_cast<std::size_t>(i_r) * static_cast<std::size_t>(n_s) + static_cast<std::size_t>(i_s);
    }
};

struct GridOverrides {
    std::optional<double> r_max;
    std::optional<int> n_r;
    std::optional<double> s_min;
    std::optional<double> s_max;
    std::optional<int> n_s;
    std::optional<int> n_e;
    std::optional<int> n_t;
};

/// Log-price band: +-(|mu - sigma^2/2| T + 3 sigma sqrt(T)).
inline double default_log_price_halfwidth(const ModelParams& params) {
    return std::abs(params.mu - 0.5 * params.sigma * params.sigma) * params.T + 3.0 * params.sigma * std::sqrt(params.T);
}

inline GridSpec build_grid(const ModelParams& params, const GridOverrides& overrides = {}) {
    GridSpec g;
    const double half = default_log_price_halfwidth(params);
    g.r_max = overrides.r_max.value_or(1.0);
    g.n_r = overrides.n_r.value_or(151);
    g.s_min = overrides.s_min.value_or(-half);
    g.s_max = overrides.s_max.value_or(half);
    g.n_s = overrides.n_s.value_or(101);
    g.n_e = overrides.n_e.value_or(11);
    g.n_t = overrides.n_t.value_or(50);
    g.K = params.K;

    auto axis = [](int n, const char* name) {
        if (n < 2) throw ValidationError(std::string("degenerate grid axis '") + name + "': need at least 2 nodes");
    };
    axis(g.n_r, "n_r");
    axis(g.n_s, "n_s");
    axis(g.n_e, "n_e");
    axis(g.n_t, "n_t");
    if (!(g.r_max > 0.0)) throw ValidationError("degenerate grid axis 'r_max': must be > 0");
    if (!(g.s_max - g.s_min > 1e-12))
        throw ValidationError("degenerate grid axis 's': s_min (" + std::to_string(g.s_min) + ") must be below s_max (" +
                              std::to_string(g.s_max) + ")");
    return g;
}

// ---------------------------------------------------------------------------
// Generator stencils
// ---------------------------------------------------------------------------

/// One row of the generator matrix: jump rates to the four axis neighbours.
/// Absent neighbours (grid edge) carry rate 0.
struct GeneratorRow {
    std::size_t node = 0;
    double r_down = 0.0;
    double r_up = 0.0;
    double s_down = 0.0;
    double s_up = 0.0;

    double total_rate() const noexcept { return r_down + r_up + s_down + s_up; }
    double diagonal() const noexcept { return -total_rate(); }
};

struct AxisRates {
    double down = 0.0;
    double up = 0.0;
};

/// Upwind drift plus central diffusion on a uniform axis. At an edge the
/// diffusion reflects, and a drift pointing off the grid is taken one-sided
/// (backward difference), which lowers the inward rate by |drift|/h. That rate
/// is floored at 0 when the diffusion cannot carry it.
inline AxisRates axis_rates(double drift, double variance, double h, bool has_down, bool has_up) noexcept {
    const double diffusion = 0.5 * variance / (h * h);
    AxisRates out;
    if (has_up) out.up = std::max(drift, 0.0) / h + diffusion;
    if (has_down) out.down = std::max(-drift, 0.0) / h + diffusion;
    if (!has_up && has_down && drift > 0.0) out.down = std::max(out.down - drift / h, 0.0);
    if (!has_down && has_up && drift < 0.0) out.up = std::max(out.up + drift / h, 0.0);
    return out;
}

struct AxisCoefficients {
    double drift = 0.0;
    double variance = 0.0;
};

inline AxisCoefficients resource_coefficients(double r, const ModelParams& params) noexcept {
    return {params.eta * r * (params.lambda_cap - r), params.gamma * params.gamma * r * r};
}

/// Log-price S = log P has constant drift mu - sigma^2/2 and variance sigma^2.
/// With Q = P the cost needs no axis of its own.
inline AxisCoefficients log_price_coefficients(const ModelParams& params) noexcept {
    return {params.mu - 0.5 * params.sigma * params.sigma, params.sigma * params.sigma};
}

inline GeneratorRow generator_stencil(int i_r, int i_s, const ModelParams& params, const GridSpec& grid) {
    GeneratorRow row;
    row.node = grid.index(i_r, i_s);
    const auto rc = resource_coefficients(grid.r(i_r), params);
    const auto r_rates = axis_rates(rc.drift, rc.variance, grid.h_r(), i_r > 0, i_r + 1 < grid.n_r);
    const auto sc = log_price_coefficients(params);
    const auto s_rates = axis_rates(sc.drift, sc.variance, grid.h_s(), i_s > 0, i_s + 1 < grid.n_s);
    row.r_down = r_rates.down;
    row.r_up = r_rates.up;
    row.s_down = s_rates.down;
    row.s_up = s_rates.up;
    return row;
}

inline std::vector<GeneratorRow> build_generator(const ModelParams& params, const GridSpec& grid) {
    std::vector<GeneratorRow> rows;
    rows.reserve(grid.nodes());
    for (int i = 0; i < grid.n_r; ++i)
        for (int j = 0; j < grid.n_s; ++j) rows.push_back(generator_stencil(i, j, params, grid));
    return rows;
}

/// Calls fn(neighbour_index, rate) for every neighbour of the row's node.
template <typename Fn>
void for_each_neighbour(const GeneratorRow& row, const GridSpec& grid, Fn&& fn) {
    const std::size_t ns = static_cast<std::size_t>(grid.n_s);
    const std::size_t i_r = row.node / ns;
    const std::size_t i_s = row.node % ns;
    if (i_r > 0) fn(row.node - ns, row.r_down);
    if (i_r + 1 < static_cast<std::size_t>(grid.n_r)) fn(row.node + ns, row.r_up);
    if (i_s > 0) fn(row.node - 1, row.s_down);
    if (i_s + 1 < ns) fn(row.node + 1, row.s_up);
}

/// (A w)_i for the generator matrix A.
inline double apply_generator(const GeneratorRow& row, const GridSpec& grid, std::span<const double> w) {
    double acc = row.diagonal() * w[row.node];
    for_each_neighbour(row, grid, [&](std::size_t j, double rate) { acc += rate * w[j]; });
    return acc;
}

// ---------------------------------------------------------------------------
// Implicit system and policy iteration
// ---------------------------------------------------------------------------

/// Per-node row choice for (I - dt A) w = rhs. A node either follows the
/// continuation row or a jump row: w_i - w_target = payoff, or w_i = payoff
/// when target == kFixedValue.
struct RowPolicy {
    static constexpr std::int32_t kContinue = -1;
    static constexpr std::int32_t kFixedValue = -2;

    std::int32_t target = kContinue;
    double payoff = 0.0;

    bool jumps() const noexcept { return target != kContinue; }
    bool operator==(const RowPolicy&) const = default;
};

class ImplicitSystem {
public:
    ImplicitSystem(std::span<const GeneratorRow> rows, const GridSpec& grid, double dt)
        : rows_(rows.begin(), rows.end()), grid_(grid), dt_(dt) {
        if (!(dt > 0.0)) throw std::invalid_argument("ImplicitSystem: dt must be > 0");
        if (rows_.size() != grid.nodes()) throw std::invalid_argument("ImplicitSystem: row count does not match grid");
    }

    const GridSpec& grid() const noexcept { return grid_; }
    double dt() const noexcept { return dt_; }
    std::span<const GeneratorRow> rows() const noexcept { return rows_; }

    /// ((I - dt A) w)_i.
    double apply_row(std::size_t i, std::span<const double> w) const {
        return w[i] - dt_ * apply_generator(rows_[i], grid_, w);
    }

    /// Solves the linear system selected by `policy`. Continuation rows take
    /// their right-hand side from `w_old`, jump rows from the policy payoff.
    std::vector<double> solve(std::span<const RowPolicy> policy, std::span<const double> w_old) {
        const std::size_t n = grid_.nodes();
        const bool all_continue =
            std::none_of(policy.begin(), policy.end(), [](const RowPolicy& p) { return p.jumps(); });
        if (all_continue) {
            if (!continuation_ready_) {
                factorize(continuation_lu_, policy);
                continuation_ready_ = true;
            }
        } else if (!(cached_ready_ && std::equal(policy.begin(), policy.end(), cached_policy_.begin(),
                                                  cached_policy_.end(), same_structure))) {
            factorize(cached_lu_, policy);
            cached_policy_.assign(policy.begin(), policy.end());
            cached_ready_ = true;
        }
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            rhs[static_cast<Eigen::Index>(i)] = policy[i].jumps() ? policy[i].payoff : w_old[i];
        Eigen::VectorXd sol = all_continue ? continuation_lu_.solve(rhs) : cached_lu_.solve(rhs);
        ++solves_;
        return {sol.data(), sol.data() + sol.size()};
    }

    std::size_t factorizations() const noexcept { return factorizations_; }
    std::size_t solves() const noexcept { return solves_; }

private:
    using Lu = Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>;

    static bool same_structure(const RowPolicy& a, const RowPolicy& b) noexcept { return a.target == b.target; }

    void factorize(Lu& lu, std::span<const RowPolicy> policy) {
        const std::size_t n = grid_.nodes();
        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(5 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto row_index = static_cast<int>(i);
            const RowPolicy& p = policy[i];
            if (p.target == RowPolicy::kContinue) {
                const GeneratorRow& row = rows_[i];
                triplets.emplace_back(row_index, row_index, 1.0 + dt_ * row.total_rate());
                for_each_neighbour(row, grid_, [&](std::size_t j, double rate) {
                    if (rate != 0.0) triplets.emplace_back(row_index, static_cast<int>(j), -dt_ * rate);
                });
            } else {
                triplets.emplace_back(row_index, row_index, 1.0);
                if (p.target >= 0 && static_cast<std::size_t>(p.target) != i)
                    triplets.emplace_back(row_index, p.target, -1.0);
            }
        }
        Eigen::SparseMatrix<double> m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        m.setFromTriplets(triplets.begin(), triplets.end());
        m.makeCompressed();
        lu.compute(m);
        if (lu.info() != Eigen::Success) throw ConvergenceError("implicit system factorization failed", 0.0);
        ++factorizations_;
    }

    std::vector<GeneratorRow> rows_;
    GridSpec grid_;
    double dt_;
    Lu continuation_lu_;
    bool continuation_ready_ = false;
    Lu cached_lu_;
    std::vector<RowPolicy> cached_policy_;
    bool cached_ready_ = false;
    std::size_t factorizations_ = 0;
    std::size_t solves_ = 0;
};

struct HowardOptions {
    double tol_policy = 1e-8;
    int max_iters = 200;
    double tol_tie = 1e-10;
};

/// Best jump available at a node given the current iterate; `value` is the
/// jump's worth (payoff + w_target, or payoff for a fixed value).
struct JumpCandidate {
    RowPolicy row;
    double value = -std::numeric_limits<double>::infinity();
    bool available() const noexcept { return row.jumps(); }
};

struct HowardResult {
    std::vector<double> values;
    std::vector<RowPolicy> policy;
    int iterations = 0;
    /// max |w_old - (I - dt A) w| over continuation nodes
    double continuation_residual = 0.0;
};

/// Solves max{ w_old - (I - dt A) w, J w - w } = 0 node-wise, where J w is the
/// best jump offered by `candidates(w, out)`. A node switches to its jump only
/// when the jump beats continuation by more than tol_tie.
template <typename Candidates>
HowardResult howard_solve(ImplicitSystem& system, std::span<const double> w_old, Candidates&& candidates,
                          const HowardOptions& options, std::vector<RowPolicy> policy) {
    const std::size_t n = system.grid().nodes();
    if (policy.size() != n) policy.assign(n, RowPolicy{});
    std::vector<JumpCandidate> jumps(n);
    std::vector<double> w;
    std::vector<double> previous;
    HowardResult result;
    std::vector<RowPolicy> used;
    for (int it = 1;; ++it) {
        w = system.solve(policy, w_old);
        used = policy;
        candidates(std::span<const double>(w), std::span<JumpCandidate>(jumps));
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const double keep = w_old[i] - system.apply_row(i, w);
            RowPolicy next{};
            if (jumps[i].available() && jumps[i].value - w[i] > keep + options.tol_tie) next = jumps[i].row;
            if (!(next == policy[i])) {
                changed = true;
                policy[i] = next;
            }
        }
        double change = std::numeric_limits<double>::infinity();
        if (!previous.empty()) {
            change = 0.0;
            for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(w[i] - previous[i]));
        }
        result.iterations = it;
        if (!changed || change < options.tol_policy) break;
        if (it >= options.max_iters)
            throw ConvergenceError("policy iteration exceeded " + std::to_string(options.max_iters) + " iterations",
                                   change);
        previous = w;
    }
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (!used[i].jumps()) residual = std::max(residual, std::abs(w_old[i] - system.apply_row(i, w)));
    result.values = std::move(w);
    result.policy = std::move(used);
    result.continuation_residual = residual;
    return result;
}

struct StepOutcome {
    std::vector<double> values;
    std::vector<bool> on_obstacle;
    int iterations = 0;
    double residual = 0.0;
};

/// One backward implicit step (I - dt A) w_new = w_old; with an obstacle psi
/// it solves min{(I - dt A) w - w_old, w - psi} = 0 instead.
inline StepOutcome implicit_step(std::span<const double> w_old, double dt, std::span<const GeneratorRow> rows,
                                 const GridSpec& grid, std::optional<std::span<const double>> obstacle = std::nullopt,
                                 const HowardOptions& options = {}) {
    for (double v : w_old)
        if (!std::isfinite(v)) throw std::invalid_argument("implicit_step: non-finite input slice");
    ImplicitSystem system(rows, grid, dt);
    StepOutcome out;
    if (!obstacle) {
        std::vector<RowPolicy> policy(grid.nodes());
        out.values = system.solve(policy, w_old);
        out.on_obstacle.assign(grid.nodes(), false);
        out.iterations = 1;
        for (std::size_t i = 0; i < grid.nodes(); ++i)
            out.residual = std::max(out.residual, std::abs(w_old[i] - system.apply_row(i, out.values)));
        return out;
    }
    const auto psi = *obstacle;
    auto fixed = [psi](std::span<const double>, std::span<JumpCandidate> jumps) {
        for (std::size_t i = 0; i < jumps.size(); ++i)
            jumps[i] = {RowPolicy{RowPolicy::kFixedValue, psi[i]}, psi[i]};
    };
    auto res = howard_solve(system, w_old, fixed, options, {});
    out.values = std::move(res.values);
    out.on_obstacle.resize(grid.nodes());
    for (std::size_t i = 0; i < grid.nodes(); ++i) out.on_obstacle[i] = res.policy[i].jumps();
    out.iterations = res.iterations;
    out.residual = res.continuation_residual;
    return out;
}

// ---------------------------------------------------------------------------
// Interpolation
// ---------------------------------------------------------------------------

/// Linear interpolation along the resource axis at log-price node i_s.
/// Queries above r_max are clamped to r_max.
inline double interpolate_r(std::span<const double> slice, const GridSpec& grid, double r, int i_s) {
    if (r < -1e-12) throw std::out_of_range("interpolate: resource " + std::to_string(r) + " below grid minimum");
    const double pos = std::clamp(r, 0.0, grid.r_max) / grid.h_r();
    int lo = std::min(static_cast<int>(pos), grid.n_r - 2);
    const double frac = pos - lo;
    const double a = slice[grid.index(lo, i_s)];
    const double b = slice[grid.index(lo + 1, i_s)];
    return frac == 0.0 ? a : a + frac * (b - a);
}

/// Bilinear interpolation on one (resource, log-price) slice.
inline double interpolate(std::span<const double> slice, const GridSpec& grid, double r, double s) {
    if (r < -1e-12) throw std::out_of_range("interpolate: resource " + std::to_string(r) + " below grid minimum");
    const double tol = 1e-9 * grid.h_s();
    if (s < grid.s_min - tol || s > grid.s_max + tol)
        throw std::out_of_range("interpolate: log-price " + std::to_string(s) + " outside [s_min, s_max]");
    const double pr = std::clamp(r, 0.0, grid.r_max) / grid.h_r();
    const double ps = std::clamp((s - grid.s_min) / grid.h_s(), 0.0, static_cast<double>(grid.n_s - 1));
    const int ir = std::min(static_cast<int>(pr), grid.n_r - 2);
    const int is = std::min(static_cast<int>(ps), grid.n_s - 2);
    const double fr = pr - ir;
    const double fs = ps - is;
    const double w00 = slice[grid.index(ir, is)];
    const double w01 = slice[grid.index(ir, is + 1)];
    const double w10 = slice[grid.index(ir + 1, is)];
    const double w11 = slice[grid.index(ir + 1, is + 1)];
    return (1.0 - fr) * ((1.0 - fs) * w00 + fs * w01) + fr * ((1.0 - fs) * w10 + fs * w11);
}

/// Trilinear interpolation across the pending-quantity axis: `levels[l]` is the
/// slice for pending quantity grid.e(l).
inline double interpolate(std::span<const std::span<const double>> levels, const GridSpec& grid, double r, double s,
                          double e) {
    if (levels.empty()) throw std::invalid_argument("interpolate: no levels");
    if (levels.size() == 1) return interpolate(levels[0], grid, r, s);
    if (e < -1e-12 || e > grid.K + 1e-12)
        throw std::out_of_range("interpolate: pending quantity " + std::to_string(e) + " outside [0, K]");
    const double pe = grid.K > 0.0 ? std::clamp(e / grid.h_e(), 0.0, static_cast<double>(levels.size() - 1)) : 0.0;
    const int le = std::min(static_cast<int>(pe), static_cast<int>(levels.size()) - 2);
    const double fe = pe - le;
    const double a = interpolate(levels[le], grid, r, s);
    if (fe == 0.0) return a;
    return (1.0 - fe) * a + fe * interpolate(levels[le + 1], grid, r, s);
}

}  // namespace forest
