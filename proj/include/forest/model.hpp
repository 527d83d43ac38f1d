#pragma once

// Model coefficients and the uncontrolled dynamics of the resource, price and
// renewal-cost processes, plus the terminal liquidation payoff.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "forest/errors.hpp"

namespace forest {

struct ModelParams {
    // logistic resource dR = eta R (lambda - R) dt + gamma R dB
    double eta = 1.0;
    double lambda_cap = 0.7;
    double gamma = 0.1;
    // unit price dP = mu P dt + sigma P dW
    double mu = 0.07;
    double sigma = 0.1;
    // unit renewal cost dQ = rho Q dt + varsigma Q dW (same W as the price)
    double rho_cost = 0.07;
    double varsigma = 0.1;
    // harvest pays (p - c1) a - c2, renewal costs (q + c3) e
    double c1 = 0.1;
    double c2 = 0.01;
    double c3 = 0.1;
    // natural renewal per date and yield slope of g(e) = g_slope * e
    double g0 = 0.03;
    double g_slope = 1.0;
    double K = 0.3;
    double T = 3.0;
    int n_dates = 3;
    int m_delay = 1;
    bool cost_equals_price = true;

    double growth(double e) const noexcept { return g_slope * e; }
    double date_spacing() const noexcept { return T / n_dates; }
    double delay() const noexcept { return m_delay * date_spacing(); }
};

/// Coefficients of the forest example: eta = 1, lambda = 0.7, gamma = 0.1,
/// mu = 0.07, sigma = 0.1, c1 = 0.1, c2 = 0.01, c3 = 0.1, g0 = 0.03, g(x) = x,
/// renewal dates {1, 2, 3} with T = 3 and a one-date delay, Q = P.
/// K is not part of the published setup; 0.3 is this project's default.
inline ModelParams baseline_params() { return ModelParams{}; }

enum class Strictness {
    /// every invariant of the model, including strictly positive volatilities and K
    Strict,
    /// additionally admits gamma, sigma, varsigma = 0 (deterministic runs) and K = 0
    AllowDegenerate,
};

namespace detail {
inline void require(bool ok, const char* field, const std::string& rule) {
    if (!ok) throw ValidationError(std::string("invalid model parameter '") + field + "': " + rule);
}
}  // namespace detail

/// Returns `raw` unchanged iff every parameter invariant holds; throws
/// ValidationError naming the first offending field otherwise.
inline ModelParams validate_params(const ModelParams& raw, Strictness mode = Strictness::Strict) {
    using detail::require;
    const bool relaxed = mode == Strictness::AllowDegenerate;
    auto finite = [](double v) { return std::isfinite(v); };
    auto positive = [&](double v) { return finite(v) && v > 0.0; };
    auto noise_ok = [&](double v) { return relaxed ? finite(v) && v >= 0.0 : positive(v); };

    require(positive(raw.eta), "eta", "must be > 0");
    require(positive(raw.lambda_cap), "lambda_cap", "must be > 0");
    require(noise_ok(raw.gamma), "gamma", relaxed ? "must be >= 0" : "must be > 0");
    require(positive(raw.mu), "mu", "must be > 0");
    require(noise_ok(raw.sigma), "sigma", relaxed ? "must be >= 0" : "must be > 0");
    require(positive(raw.rho_cost), "rho_cost", "must be > 0");
    require(noise_ok(raw.varsigma), "varsigma", relaxed ? "must be >= 0" : "must be > 0");
    require(positive(raw.c1), "c1", "must be > 0");
    require(positive(raw.c2), "c2", "must be > 0");
    require(positive(raw.c3), "c3", "must be > 0");
    require(finite(raw.g0) && raw.g0 >= 0.0, "g0", "must be >= 0");
    require(finite(raw.g_slope) && raw.g_slope >= 0.0, "g_slope", "must be >= 0");
    require(relaxed ? finite(raw.K) && raw.K >= 0.0 : positive(raw.K), "K",
            relaxed ? "must be >= 0" : "must be > 0");
    require(positive(raw.T), "T", "must be > 0");
    require(raw.n_dates >= 1, "n_dates", "must be >= 1");
    require(raw.m_delay >= 0 && raw.m_delay <= raw.n_dates, "m_delay",
            "must satisfy 0 <= m_delay <= n_dates (got " + std::to_string(raw.m_delay) + " with n_dates " +
                std::to_string(raw.n_dates) + ")");
    return raw;
}

/// Cash, resource stock, unit price and unit renewal cost.
struct State {
    double x = 0.0;
    double r = 0.0;
    double p = 1.0;
    double q = 1.0;

    bool admissible() const noexcept { return r >= 0.0 && p > 0.0 && q > 0.0; }
};

/// Exact solution of dR = eta R (lambda - R) dt after time dt.
inline double logistic_step_deterministic(double r, double dt, const ModelParams& params) {
    if (r <= 0.0) return 0.0;
    const double lam = params.lambda_cap;
    const double growth = std::exp(params.eta * lam * dt);
    return r * lam * growth / (lam + r * (growth - 1.0));
}

/// Samples the logistic diffusion on [t0, t1] through its closed form
///
///   R_u = E_u / (1/r0 + eta * int_t0^u E_v dv),  E_u = exp((eta lambda - gamma^2/2)(u - t0) + gamma B_u),
///
/// driven by `gauss_draws` (one standard normal per sub-step, n_sub of them).
/// The path integral uses the trapezoid rule on the sub-grid. Returns the
/// n_sub + 1 values R at t0, t0 + h, ..., t1.
inline std::vector<double> logistic_sample_path(double r0, double t0, double t1, int n_sub,
                                                std::span<const double> gauss_draws,
                                                const ModelParams& params) {
    if (n_sub < 1) throw std::invalid_argument("logistic_sample_path: n_sub must be >= 1");
    if (gauss_draws.size() != static_cast<std::size_t>(n_sub))
        throw std::invalid_argument("logistic_sample_path: expected " + std::to_string(n_sub) +
                                    " draws, got " + std::to_string(gauss_draws.size()));
    if (t1 < t0) throw std::invalid_argument("logistic_sample_path: t1 < t0");

    std::vector<double> path(static_cast<std::size_t>(n_sub) + 1, 0.0);
    if (r0 <= 0.0) return path;
    path[0] = r0;

    const double h = (t1 - t0) / n_sub;
    const double sqrt_h = std::sqrt(h);
    const double a = params.eta * params.lambda_cap - 0.5 * params.gamma * params.gamma;
    double brownian = 0.0;
    double prev_exp = 1.0;
    double integral = 0.0;
    for (int j = 1; j <= n_sub; ++j) {
        brownian += sqrt_h * gauss_draws[j - 1];
        const double cur_exp = std::exp(a * j * h + params.gamma * brownian);
        integral += 0.5 * h * (prev_exp + cur_exp);
        path[j] = r0 * cur_exp / (1.0 + params.eta * r0 * integral);
        prev_exp = cur_exp;
    }
    return path;
}

/// Terminal value of the logistic sampler without materialising the path.
inline double logistic_sample_end(double r0, double dt, std::span<const double> gauss_draws,
                                  const ModelParams& params) {
    if (r0 <= 0.0) return 0.0;
    const int n_sub = static_cast<int>(gauss_draws.size());
    const double h = dt / n_sub;
    const double sqrt_h = std::sqrt(h);
    const double a = params.eta * params.lambda_cap - 0.5 * params.gamma * params.gamma;
    double brownian = 0.0;
    double prev_exp = 1.0;
    double integral = 0.0;
    double cur_exp = 1.0;
    for (int j = 1; j <= n_sub; ++j) {
        brownian += sqrt_h * gauss_draws[j - 1];
        cur_exp = std::exp(a * j * h + params.gamma * brownian);
        integral += 0.5 * h * (prev_exp + cur_exp);
        prev_exp = cur_exp;
    }
    return r0 * cur_exp / (1.0 + params.eta * r0 * integral);
}

/// Exact geometric Brownian motion transition.
inline double gbm_step(double v, double dt, double dw, double drift, double vol) noexcept {
    return v * std::exp((drift - 0.5 * vol * vol) * dt + vol * dw);
}

/// Net proceeds of selling the whole stock, or zero if that loses money.
inline double liquidation_gain(double r, double p, const ModelParams& params) noexcept {
    return std::max((p - params.c1) * r - params.c2, 0.0);
}

/// L(z) = max{x + (p - c1) r - c2, x}.
inline double liquidation(const State& z, const ModelParams& params) noexcept {
    return z.x + liquidation_gain(z.r, z.p, params);
}

}  // namespace forest
