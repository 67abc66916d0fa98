#include "gfagru/gen_factor.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace gfagru;

namespace {

const std::vector<TailParams> kTails{{1, 1}, {1, 1.5}, {1.5, 2}, {2, 3}, {3, 3}, {3, 1}};

double tape_value(const std::function<Var(Tape&, std::vector<Var>&)>& build, const std::vector<double>& x) {
    Tape t;
    std::vector<Var> leaves;
    for (double v : x) leaves.push_back(t.leaf(Tensor::scalar(v)));
    return build(t, leaves).value()[0];
}

std::vector<double> tape_grad(const std::function<Var(Tape&, std::vector<Var>&)>& build, const std::vector<double>& x) {
    Tape t;
    std::vector<Var> leaves;
    for (double v : x) leaves.push_back(t.leaf(Tensor::scalar(v)));
    Var out = build(t, leaves);
    t.backward(out, Tensor(out.value().shape(), 1.0));
    std::vector<double> g;
    for (Var v : leaves) g.push_back(t.grad(v)[0]);
    return g;
}

void expect_grad_matches(const std::function<Var(Tape&, std::vector<Var>&)>& build, const std::vector<double>& x,
                         double rel = 1e-5) {
    const auto g = tape_grad(build, x);
    const auto fd = oracle::fd_gradient([&](const std::vector<double>& p) { return tape_value(build, p); }, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(g[i], fd[i], rel * std::max(1.0, std::abs(fd[i]))) << "coordinate " << i;
    }
}

}  // namespace

TEST(GTransform, ZeroIsFixed) {
    for (const auto& t : kTails) EXPECT_EQ(g(0.0, t), 0.0);
}

TEST(GTransform, UnitTailsAreLinear) {
    for (double x = -10; x <= 10; x += 0.37) EXPECT_NEAR(g(x, {1, 1}), 1.5 * x, 1e-12);
}

TEST(GTransform, InverseRoundTrip) {
    for (const auto& t : kTails) {
        for (double x = -10; x <= 10; x += 0.05) EXPECT_NEAR(g_inverse(g(x, t), t), x, 1e-8);
    }
}

TEST(GTransform, StrictlyIncreasing) {
    std::mt19937_64 eng(1);
    std::uniform_real_distribution<double> tail(1.0, 3.0), xs(-12.0, 12.0);
    for (int i = 0; i < 2000; ++i) {
        const TailParams t{tail(eng), tail(eng)};
        const double x = xs(eng);
        EXPECT_GT(g_prime(x, t), 0.0);
        EXPECT_LT(g(x, t), g(x + 1e-3, t));
    }
}

TEST(GTransform, DerivativeMatchesDifferences) {
    for (const auto& t : kTails) {
        for (double x = -4; x <= 4; x += 0.5) {
            const double fd = (g(x + 1e-6, t) - g(x - 1e-6, t)) / 2e-6;
            EXPECT_NEAR(g_prime(x, t), fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(GTransform, HeavierTailGrowsFaster) {
    EXPECT_GT(g(4.0, {3, 1}), g(4.0, {1.5, 1}));
    EXPECT_LT(g(-4.0, {1, 3}), g(-4.0, {1, 1.5}));
}

TEST(GTransform, OverflowIsReported) {
    EXPECT_THROW(g(1e4, {3, 3}), NumericError);
    EXPECT_THROW(g_inverse(std::numeric_limits<double>::infinity(), {2, 2}), NumericError);
}

TEST(TailParams, Bounds) {
    EXPECT_NO_THROW((TailParams{1, 3}.validate()));
    EXPECT_THROW((TailParams{0.9, 2}.validate()), std::invalid_argument);
    EXPECT_THROW((TailParams{2, 3.1}.validate()), std::invalid_argument);
}

TEST(Likelihood, GaussianReduction) {
    // u = v = 1: y = alpha + 1.5 beta Z is normal with sd 1.5 beta.
    const MarketTheta th{0.01, 0.04};
    for (double y : {-0.2, -0.01, 0.0, 0.05, 0.3}) {
        const double s = 1.5 * th.beta;
        const double ref = -0.5 * std::log(2 * std::numbers::pi) - std::log(s) - 0.5 * std::pow((y - th.alpha) / s, 2);
        EXPECT_NEAR(market_loglik(y, th, {1, 1}), ref, 1e-10);
    }
}

TEST(Likelihood, DensityIntegratesToOne) {
    std::mt19937_64 eng(3);
    std::uniform_real_distribution<double> tail(1.0, 3.0), a(-0.05, 0.05), b(0.01, 0.1);
    for (int k = 0; k < 3; ++k) {
        const MarketTheta th{a(eng), b(eng)};
        const TailParams t{tail(eng), tail(eng)};
        // integrate in the latent variable: y = alpha + beta g(x) covers the line
        double total = 0.0;
        const double h = 1e-3;
        for (double x = -12; x <= 12; x += h) {
            const double y = th.alpha + th.beta * g(x, t);
            total += std::exp(market_loglik(y, th, t)) * th.beta * g_prime(x, t) * h;
        }
        EXPECT_NEAR(total, 1.0, 1e-3);
    }
}

TEST(Likelihood, StockReducesToMarketFormWhenLoadingIsZero) {
    const StockTheta st{0.002, 0.0, 0.05};
    const MarketTheta mt{0.002, 0.05};
    const TailParams t{1.7, 2.2};
    for (double y : {-0.1, 0.0, 0.07}) {
        EXPECT_NEAR(stock_cond_loglik(y, 0.8, st, {2, 2}, t), market_loglik(y, mt, t), 1e-12);
    }
}

TEST(TapeOps, GTransformGradients) {
    auto build = [](Tape&, std::vector<Var>& v) { return ad::gtransform(v[0], v[1], v[2]); };
    for (double x : {-2.0, -0.3, 0.0, 0.7, 2.5}) expect_grad_matches(build, {x, 1.7, 2.4});
    auto prime = [](Tape&, std::vector<Var>& v) { return ad::gtransform_prime(v[0], v[1], v[2]); };
    for (double x : {-2.0, 0.4, 1.9}) expect_grad_matches(prime, {x, 1.3, 2.8});
    auto inv = [](Tape&, std::vector<Var>& v) { return ad::gtransform_inverse(v[0], v[1], v[2]); };
    for (double y : {-6.0, -0.5, 0.2, 3.0}) expect_grad_matches(inv, {y, 2.1, 1.4});
}

TEST(TapeOps, NllMatchesScalarLikelihood) {
    Tape t;
    const std::vector<double> ys{-0.03, 0.01, 0.05};
    Var nll = ad::market_nll(t.constant(Tensor::scalar(0.004)), t.constant(Tensor::scalar(0.02)),
                             t.constant(Tensor::scalar(1.4)), t.constant(Tensor::scalar(2.2)),
                             t.constant(Tensor::column(ys)));
    double ref = 0.0;
    for (double y : ys) ref -= market_loglik(y, {0.004, 0.02}, {1.4, 2.2});
    EXPECT_NEAR(nll.value()[0], ref, 1e-9);
}

TEST(TapeOps, NllGradients) {
    auto market = [](Tape& t, std::vector<Var>& v) {
        return ad::market_nll(v[0], v[1], v[2], v[3], t.constant(Tensor::column({-0.04, 0.0, 0.03, 0.09})));
    };
    expect_grad_matches(market, {0.005, 0.03, 1.6, 2.3}, 1e-4);
    auto stock = [](Tape& t, std::vector<Var>& v) {
        return ad::stock_nll(v[0], v[1], v[2], v[3], v[4], v[5], v[6], t.constant(Tensor::column({-0.02, 0.04})),
                             t.constant(Tensor::column({-0.5, 1.2})));
    };
    expect_grad_matches(stock, {0.001, 0.02, 0.03, 1.2, 2.5, 1.8, 1.4}, 1e-4);
}

TEST(Simulate, DeterministicAndBlockIndependent) {
    ForecastedFactorModel m;
    m.market = {0.01, 0.04};
    m.tail_market = {1.5, 2};
    m.stocks = {{"A", {0.0, 0.03, 0.05}, {1.5, 2}, {1, 1}}, {"B", {0.01, 0.02, 0.02}, {1, 1}, {2, 2}}};
    const auto a = simulate(m, 5000, 42);
    const auto b = simulate(m, 5000, 42);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.market, b.market);
    const auto longer = simulate(m, 9000, 42);
    for (std::size_t i = 0; i < a.values.size(); ++i) ASSERT_EQ(a.values[i], longer.values[i]);
    EXPECT_NE(simulate(m, 100, 43).values, simulate(m, 100, 42).values);
}

TEST(Simulate, GaussianMoments) {
    ForecastedFactorModel m;
    m.market = {0.01, 0.04};
    m.stocks = {{"A", {0.02, 0.03, 0.05}, {1, 1}, {1, 1}}};
    const std::size_t n = 200000;
    const auto s = simulate(m, n, 7);
    double mean = 0, sq = 0, cov = 0, mm = 0;
    for (std::size_t r = 0; r < n; ++r) {
        mean += s.values[r];
        mm += s.market[r];
    }
    mean /= n;
    mm /= n;
    for (std::size_t r = 0; r < n; ++r) {
        sq += (s.values[r] - mean) * (s.values[r] - mean);
        cov += (s.values[r] - mean) * (s.market[r] - mm);
    }
    const double sd = std::sqrt(sq / n);
    const double expected_sd = 1.5 * std::sqrt(0.03 * 0.03 + 0.05 * 0.05);
    EXPECT_NEAR(mean, 0.02, 4 * expected_sd / std::sqrt(n));
    EXPECT_NEAR(sd / expected_sd, 1.0, 0.01);
    EXPECT_NEAR(cov / n, 1.5 * 0.03 * 1.5 * 0.04, 4 * 1.5 * 0.04 * expected_sd / std::sqrt(n));
}

TEST(Simulate, RejectsInvalidModel) {
    ForecastedFactorModel m;
    m.market = {0.0, 0.0};
    m.stocks = {{"A", {0, 0, 1}, {1, 1}, {1, 1}}};
    EXPECT_THROW(simulate(m, 10, 1), std::invalid_argument);
    m.market.beta = 1.0;
    EXPECT_THROW(simulate(m, 0, 1), std::invalid_argument);
}

TEST(Scenarios, CsvRoundTrip) {
    ForecastedFactorModel m;
    m.market = {0.01, 0.04};
    m.stocks = {{"A", {0, 0.03, 0.05}, {1, 1}, {1, 1}}, {"B", {0, 0.01, 0.05}, {1, 1}, {3, 1}}};
    const auto s = simulate(m, 64, 1);
    std::stringstream buf;
    write_scenarios_csv(buf, s);
    const auto back = read_scenarios_csv(buf);
    EXPECT_EQ(back.tickers, s.tickers);
    EXPECT_EQ(back.values, s.values);
    EXPECT_EQ(back.market, s.market);
}
