#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "forest/impulse.hpp"
#include "forest/model.hpp"
#include "forest/oracles.hpp"
#include "forest/rng.hpp"

using namespace forest;

TEST(ValidateParams, BaselineAccepted) {
    const ModelParams p = baseline_params();
    EXPECT_NO_THROW(validate_params(p));
    EXPECT_DOUBLE_EQ(p.eta, 1.0);
    EXPECT_DOUBLE_EQ(p.lambda_cap, 0.7);
    EXPECT_DOUBLE_EQ(p.gamma, 0.1);
    EXPECT_EQ(p.n_dates, 3);
    EXPECT_EQ(p.m_delay, 1);
}

TEST(ValidateParams, ZeroGammaRejectedAndNamed) {
    ModelParams p = baseline_params();
    p.gamma = 0.0;
    try {
        validate_params(p);
        FAIL() << "expected rejection";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("'gamma'"), std::string::npos);
    }
    EXPECT_NO_THROW(validate_params(p, Strictness::AllowDegenerate));
}

TEST(ValidateParams, DelayLongerThanCalendarRejected) {
    ModelParams p = baseline_params();
    p.m_delay = 5;
    EXPECT_THROW(validate_params(p), ValidationError);
    EXPECT_THROW(validate_params(p, Strictness::AllowDegenerate), ValidationError);
}

TEST(ValidateParams, OtherInvariants) {
    auto rejects = [](auto mutate) {
        ModelParams p = baseline_params();
        mutate(p);
        EXPECT_THROW(validate_params(p), ValidationError);
    };
    rejects([](ModelParams& p) { p.K = 0.0; });
    rejects([](ModelParams& p) { p.c2 = -1.0; });
    rejects([](ModelParams& p) { p.g0 = -0.1; });
    rejects([](ModelParams& p) { p.n_dates = 0; });
    rejects([](ModelParams& p) { p.T = std::nan(""); });
}

TEST(LogisticDeterministic, Examples) {
    const ModelParams p = baseline_params();
    EXPECT_EQ(logistic_step_deterministic(0.0, 2.0, p), 0.0);
    for (double dt : {0.1, 1.0, 7.0}) EXPECT_NEAR(logistic_step_deterministic(0.7, dt, p), 0.7, 1e-15);
    const double v = logistic_step_deterministic(0.5, 1.0, p);
    EXPECT_NEAR(v, 0.7 / (1.0 + 0.4 * std::exp(-0.7)), 1e-15);
    EXPECT_NEAR(v, 0.583998, 1e-6);
    EXPECT_NEAR(v, oracle::rk4_logistic(0.5, 1.0, 4000, p), 1e-8);
}

TEST(LogisticSampler, NoiseFreeLimitAndExtinction) {
    ModelParams p = baseline_params();
    p.gamma = 0.0;
    std::vector<double> draws(4096, 0.7);
    const auto path = logistic_sample_path(0.5, 0.0, 1.0, 4096, draws, p);
    EXPECT_NEAR(path.back(), logistic_step_deterministic(0.5, 1.0, p), 1e-6);
    EXPECT_NEAR(logistic_sample_end(0.5, 1.0, draws, p), path.back(), 1e-15);

    const ModelParams b = baseline_params();
    std::vector<double> some(16, 1.3);
    for (double v : logistic_sample_path(0.0, 0.0, 1.0, 16, some, b)) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(logistic_sample_path(0.5, 0.0, 1.0, 8, some, b), std::invalid_argument);
}

TEST(LogisticSampler, PathsStayNonNegative) {
    ModelParams p = baseline_params();
    p.gamma = 1.5;
    NormalStream rng(7);
    std::vector<double> draws(32);
    for (int i = 0; i < 500; ++i) {
        rng.fill(draws.begin(), draws.end());
        for (double v : logistic_sample_path(0.3, 0.0, 1.0, 32, draws, p)) ASSERT_GE(v, 0.0);
    }
}

TEST(LogisticSampler, MeanMatchesEulerMaruyama) {
    const ModelParams p = baseline_params();
    const long n = 100000;
    double sa = 0, sa2 = 0, sb = 0, sb2 = 0;
    std::vector<double> a(64), b(1024);
    for (long i = 0; i < n; ++i) {
        NormalStream ra(path_seed(11, 2 * i)), rb(path_seed(11, 2 * i + 1));
        ra.fill(a.begin(), a.end());
        rb.fill(b.begin(), b.end());
        const double x = logistic_sample_end(0.5, 1.0, a, p);
        const double y = oracle::euler_logistic_end(0.5, 1.0, b, p);
        sa += x;
        sa2 += x * x;
        sb += y;
        sb2 += y * y;
    }
    const double ma = sa / n, mb = sb / n;
    const double se = std::sqrt((sa2 / n - ma * ma) / n + (sb2 / n - mb * mb) / n);
    EXPECT_LE(std::abs(ma - mb), 3 * se) << ma << " vs " << mb;
}

TEST(LogisticSampler, StrongErrorShrinksWithSubsteps) {
    ModelParams p = baseline_params();
    p.gamma = 0.5;
    const int fine = 8192;
    std::vector<double> errors;
    for (int n_sub : {4, 8, 16, 32}) {
        double err = 0.0;
        for (int i = 0; i < 1000; ++i) {
            NormalStream rng(path_seed(3, i));
            std::vector<double> draws(fine);
            rng.fill(draws.begin(), draws.end());
            const double ref = oracle::euler_logistic_end(0.5, 1.0, draws, p);
            const auto coarse = oracle::coarsen_draws(draws, n_sub);
            err += std::abs(logistic_sample_end(0.5, 1.0, coarse, p) - ref);
        }
        errors.push_back(err / 1000);
    }
    for (std::size_t i = 1; i < errors.size(); ++i) EXPECT_LT(errors[i], errors[i - 1]) << "at doubling " << i;
}

TEST(LogisticSampler, SecondMomentOfSupBoundedAcrossStart) {
    // never harvest, order K at every date
    const ModelParams p = baseline_params();
    const Schedule sched(p);
    const int steps_per_date = 20;
    const double dt = sched.spacing() / steps_per_date;
    std::vector<double> ratios;
    for (double r0 : {0.1, 0.5, 1.0}) {
        double acc = 0.0;
        const long n = 10000;
        std::vector<double> draws(8);
        for (long i = 0; i < n; ++i) {
            NormalStream rng(path_seed(5, i));
            State z{0.0, r0, 1.0, 1.0};
            PendingOrders pending(p.m_delay, p.K);
            double sup = r0;
            for (int k = 0; k < p.n_dates; ++k) {
                for (int s = 0; s < steps_per_date; ++s) {
                    rng.fill(draws.begin(), draws.end());
                    z.r = logistic_sample_end(z.r, dt, draws, p);
                    sup = std::max(sup, z.r);
                }
                z = apply_date(z, k + 1, pending, p.K, sched, p);
                sup = std::max(sup, z.r);
            }
            acc += sup * sup;
        }
        ratios.push_back(acc / n / (1.0 + r0 * r0));
    }
    const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
    EXPECT_LT(*hi / *lo, 10.0);
}

TEST(Gbm, Examples) {
    const double drift = 0.07, vol = 0.1, dt = 0.5;
    const double dw = -(drift - 0.5 * vol * vol) * dt / vol;
    EXPECT_NEAR(gbm_step(1.3, dt, dw, drift, vol), 1.3, 1e-15);
    EXPECT_NEAR(gbm_step(1.0, 1.0, 0.0, 0.07, 0.0), 1.07251, 1e-5);
    EXPECT_NEAR(gbm_step(1.0, 1.0, 0.0, 0.07, 0.0), std::exp(0.07), 1e-15);
}

TEST(Gbm, TerminalMeanMatchesClosedForm) {
    const long n = 100000;
    double s = 0, s2 = 0;
    NormalStream rng(99);
    for (long i = 0; i < n; ++i) {
        const double v = gbm_step(1.0, 3.0, std::sqrt(3.0) * rng(), 0.07, 0.1);
        ASSERT_GT(v, 0.0);
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    EXPECT_NEAR(std::exp(0.21), 1.23368, 1e-5);
    EXPECT_LE(std::abs(mean - std::exp(0.21)), 3 * se);
}

TEST(Liquidation, Examples) {
    const ModelParams p = baseline_params();
    EXPECT_DOUBLE_EQ(liquidation({1.7, 0.0, 2.0, 2.0}, p), 1.7);
    EXPECT_NEAR(liquidation({2.0, 0.5, 1.0, 1.0}, p), 2.44, 1e-14);
    EXPECT_DOUBLE_EQ(liquidation({3.0, 0.5, 0.1, 1.0}, p), 3.0);
    EXPECT_DOUBLE_EQ(liquidation({3.0, 0.05, 0.3, 1.0}, p), 3.0);
}

TEST(Liquidation, DominatesCashWithEqualityExactlyWhenUnprofitable) {
    const ModelParams p = baseline_params();
    NormalStream rng(1);
    for (int i = 0; i < 2000; ++i) {
        const State z{rng(), std::abs(rng()), std::exp(rng()), 1.0};
        const double l = liquidation(z, p);
        EXPECT_GE(l, z.x);
        const bool unprofitable = (z.p - p.c1) * z.r <= p.c2;
        EXPECT_EQ(l == z.x, unprofitable);
    }
}

TEST(Rng, PathSeedIndependentOfBatching) {
    NormalStream a(path_seed(42, 17));
    NormalStream b(path_seed(42, 17));
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
    EXPECT_NE(path_seed(42, 1), path_seed(42, 2));
    EXPECT_NE(path_seed(42, 1), path_seed(43, 1));
}
