#pragma once

// Independent reference computations used by the tests and the check suites.
// They are deliberately slow and straightforward.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "forest/chain.hpp"
#include "forest/impulse.hpp"
#include "forest/model.hpp"

namespace forest::oracle {

/// Euler-Maruyama for dR = eta R (lambda - R) dt + gamma R dB, one draw per
/// step, floored at 0.
inline double euler_logistic_end(double r0, double dt, std::span<const double> draws, const ModelParams& params) {
    const double h = dt / static_cast<double>(draws.size());
    const double sqrt_h = std::sqrt(h);
    double r = r0;
    for (double z : draws) {
        if (r <= 0.0) return 0.0;
        r += params.eta * r * (params.lambda_cap - r) * h + params.gamma * r * sqrt_h * z;
        r = std::max(r, 0.0);
    }
    return r;
}

/// Sums consecutive blocks of `fine` standard normals into coarse standard
/// normals (same Brownian path, coarser sampling).
inline std::vector<double> coarsen_draws(std::span<const double> fine, int coarse) {
    if (coarse < 1 || fine.size() % static_cast<std::size_t>(coarse) != 0)
        throw std::invalid_argument("coarsen_draws: fine count must be a multiple of the coarse count");
    const std::size_t block = fine.size() / static_cast<std::size_t>(coarse);
    std::vector<double> out(static_cast<std::size_t>(coarse), 0.0);
    for (std::size_t i = 0; i < fine.size(); ++i) out[i / block] += fine[i];
    for (double& v : out) v /= std::sqrt(static_cast<double>(block));
    return out;
}

/// Classical RK4 for the deterministic logistic ODE.
inline double rk4_logistic(double r, double t, int steps, const ModelParams& params) {
    auto f = [&](double x) { return params.eta * x * (params.lambda_cap - x); };
    const double h = t / steps;
    for (int i = 0; i < steps; ++i) {
        const double k1 = f(r);
        const double k2 = f(r + 0.5 * h * k1);
        const double k3 = f(r + 0.5 * h * k2);
        const double k4 = f(r + h * k3);
        r += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return r;
}

/// Dense matrix of I - dt A assembled entry by entry from the model
/// coefficients (not from the stencil rows).
inline Eigen::MatrixXd dense_implicit_matrix(const ModelParams& params, const GridSpec& grid, double dt) {
    const int n = static_cast<int>(grid.nodes());
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    const double hr = grid.h_r();
    const double hs = grid.h_s();
    const double s_drift = params.mu - 0.5 * params.sigma * params.sigma;
    const double s_var = params.sigma * params.sigma;
    for (int i = 0; i < grid.n_r; ++i) {
        const double r = i * hr;
        const double r_drift = params.eta * r * (params.lambda_cap - r);
        const double r_var = params.gamma * params.gamma * r * r;
        for (int j = 0; j < grid.n_s; ++j) {
            const int row = i * grid.n_s + j;
            auto link = [&](int col, double rate) {
                m(row, col) -= dt * rate;
                m(row, row) += dt * rate;
            };
            // edge rows: reflected diffusion, backward difference for an outward drift
            const double dr = 0.5 * r_var / (hr * hr);
            const double ds = 0.5 * s_var / (hs * hs);
            if (i + 1 < grid.n_r) {
                double rate = (r_drift > 0 ? r_drift / hr : 0.0) + dr;
                if (i == 0 && r_drift < 0) rate = std::max(dr + r_drift / hr, 0.0);
                link(row + grid.n_s, rate);
            }
            if (i > 0) {
                double rate = (r_drift < 0 ? -r_drift / hr : 0.0) + dr;
                if (i + 1 == grid.n_r && r_drift > 0) rate = std::max(dr - r_drift / hr, 0.0);
                link(row - grid.n_s, rate);
            }
            if (j + 1 < grid.n_s) {
                double rate = (s_drift > 0 ? s_drift / hs : 0.0) + ds;
                if (j == 0 && s_drift < 0) rate = std::max(ds + s_drift / hs, 0.0);
                link(row + 1, rate);
            }
            if (j > 0) {
                double rate = (s_drift < 0 ? -s_drift / hs : 0.0) + ds;
                if (j + 1 == grid.n_s && s_drift > 0) rate = std::max(ds - s_drift / hs, 0.0);
                link(row - 1, rate);
            }
        }
    }
    return m;
}

inline std::vector<double> dense_implicit_solve(const ModelParams& params, const GridSpec& grid, double dt,
                                                std::span<const double> w_old) {
    const Eigen::MatrixXd m = dense_implicit_matrix(params, grid, dt);
    const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(w_old.data(), static_cast<Eigen::Index>(w_old.size()));
    const Eigen::VectorXd x = m.fullPivLu().solve(rhs);
    return {x.data(), x.data() + x.size()};
}

/// Reference dynamic program on the same discrete chain: every implicit step
/// is solved by Gauss-Seidel value iteration with an exhaustive harvest
/// search, every date by enumerating all (order, harvest) pairs, with pending
/// orders kept as explicit lists of quantity levels.
class ChainDp {
public:
    ChainDp(const ModelParams& params, const GridSpec& grid) : p_(params), g_(grid), sched_(params) {
        rows_ = build_reference_rows();
    }

    /// Reduced value at t = 0 for an empty pending book, at node-free (r, p)
    /// through bilinear interpolation of the interval-0 step-0 slice.
    double value(double r, double p) {
        const auto slice = solve_all();
        return bilinear(slice, r, std::log(p));
    }

    /// Sweeps and returns the interval-0 step-0 slice.
    std::vector<double> solve_all() {
        const int n = sched_.n_dates();
        const int m = sched_.m_delay();
        // books[k] lists every pending book alive in interval k
        auto books_at = [&](int k) {
            const int count = m == 0 ? 0 : std::min(k, m);
            std::vector<std::vector<int>> out{{}};
            for (int c = 0; c < count; ++c) {
                std::vector<std::vector<int>> next;
                for (const auto& b : out)
                    for (int l = 0; l < g_.n_e; ++l) {
                        auto nb = b;
                        nb.push_back(l);
                        next.push_back(nb);
                    }
                out = std::move(next);
            }
            return out;
        };

        // post-date values of interval k, keyed by book
        std::vector<std::pair<std::vector<int>, std::vector<double>>> later;
        for (int k = n - 1; k >= 0; --k) {
            std::vector<std::pair<std::vector<int>, std::vector<double>>> current;
            for (const auto& book : books_at(k)) {
                std::vector<double> w(g_.nodes());
                for (int i = 0; i < g_.n_r; ++i)
                    for (int j = 0; j < g_.n_s; ++j) w[g_.index(i, j)] = date_value(k + 1, book, i, j, later);
                for (int step = 0; step < g_.n_t; ++step) w = value_iteration_step(w);
                current.emplace_back(book, std::move(w));
            }
            later = std::move(current);
        }
        return later.front().second;
    }

    int sweeps() const noexcept { return sweeps_; }

private:
    struct RefRow {
        std::vector<std::pair<std::size_t, double>> links;
        double total = 0.0;
    };

    std::vector<RefRow> build_reference_rows() const {
        const Eigen::MatrixXd m = dense_implicit_matrix(p_, g_, dt());
        std::vector<RefRow> rows(g_.nodes());
        for (std::size_t a = 0; a < g_.nodes(); ++a) {
            for (std::size_t b = 0; b < g_.nodes(); ++b) {
                if (a == b || m(a, b) == 0.0) continue;
                const double rate = -m(a, b) / dt();
                rows[a].links.emplace_back(b, rate);
                rows[a].total += rate;
            }
        }
        return rows;
    }

    double dt() const { return sched_.spacing() / g_.n_t; }

    double margin(int j) const { return std::exp(g_.s(j)) - p_.c1; }

    std::vector<double> value_iteration_step(const std::vector<double>& next) {
        std::vector<double> w = next;
        const double h = dt();
        for (int sweep = 0; sweep < 100000; ++sweep) {
            double change = 0.0;
            for (int i = 0; i < g_.n_r; ++i) {
                for (int j = 0; j < g_.n_s; ++j) {
                    const std::size_t idx = g_.index(i, j);
                    const auto& row = rows_[idx];
                    double acc = next[idx];
                    for (const auto& [col, rate] : row.links) acc += h * rate * w[col];
                    double best = acc / (1.0 + h * row.total);
                    for (int a = 1; a <= i; ++a)
                        best = std::max(best, margin(j) * a * g_.h_r() - p_.c2 + w[g_.index(i - a, j)]);
                    change = std::max(change, std::abs(best - w[idx]));
                    w[idx] = best;
                }
            }
            ++sweeps_;
            if (change < 1e-14) return w;
        }
        throw std::runtime_error("ChainDp: value iteration did not settle");
    }

    double lookup_r(const std::vector<double>& slice, double r, int j) const {
        const double x = std::min(r, g_.r_max) / g_.h_r();
        int lo = static_cast<int>(std::floor(x));
        if (lo >= g_.n_r - 1) return slice[g_.index(g_.n_r - 1, j)];
        const double f = x - lo;
        return (1.0 - f) * slice[g_.index(lo, j)] + f * slice[g_.index(lo + 1, j)];
    }

    double bilinear(const std::vector<double>& slice, double r, double s) const {
        const double y = std::clamp((s - g_.s_min) / g_.h_s(), 0.0, static_cast<double>(g_.n_s - 1));
        int lo = std::min(static_cast<int>(std::floor(y)), g_.n_s - 2);
        const double f = y - lo;
        return (1.0 - f) * lookup_r(slice, r, lo) + f * lookup_r(slice, r, lo + 1);
    }

    // pre-date value at date `date` for pending book `book` (levels, oldest first)
    double date_value(int date, const std::vector<int>& book, int i, int j,
                      const std::vector<std::pair<std::vector<int>, std::vector<double>>>& later) const {
        const int m = sched_.m_delay();
        const double p = std::exp(g_.s(j));
        const bool last = date == sched_.n_dates();
        const bool matures = m > 0 && date > m;
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a <= i; ++a) {
            const double cash_h = a == 0 ? 0.0 : margin(j) * a * g_.h_r() - p_.c2;
            for (int l = 0; l < g_.n_e; ++l) {
                const double e_new = l * g_.h_e();
                double r_after = g_.r(i - a) + p_.g0;
                std::vector<int> nb = book;
                if (m == 0) {
                    r_after += p_.g_slope * e_new;
                } else {
                    if (matures) {
                        r_after += p_.g_slope * book.front() * g_.h_e();
                        nb.erase(nb.begin());
                    }
                    nb.push_back(l);
                }
                double post;
                if (last) {
                    post = std::max((p - p_.c1) * std::min(r_after, g_.r_max) - p_.c2, 0.0);
                } else {
                    const auto it = std::find_if(later.begin(), later.end(), [&](const auto& e) { return e.first == nb; });
                    if (it == later.end()) throw std::logic_error("ChainDp: pending book missing");
                    post = lookup_r(it->second, r_after, j);
                }
                best = std::max(best, cash_h - (p + p_.c3) * e_new + post);
            }
        }
        return best;
    }

    ModelParams p_;
    GridSpec g_;
    Schedule sched_;
    std::vector<RefRow> rows_;
    int sweeps_ = 0;
};

}  // namespace forest::oracle
