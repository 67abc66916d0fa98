#include "gfagru/benchmarks.hpp"

#include "gfagru/errors.hpp"
#include "gfagru/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gfagru;

namespace {

std::vector<std::vector<double>> correlated_pairs(double rho, std::size_t n, std::size_t stocks, unsigned seed) {
    // e[0] market, e[1..] stocks
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::vector<std::vector<double>> e(stocks + 1, std::vector<double>(n));
    for (std::size_t t = 0; t < n; ++t) {
        const double m = z(rng);
        e[0][t] = m;
        for (std::size_t i = 1; i <= stocks; ++i) e[i][t] = rho * m + std::sqrt(1 - rho * rho) * z(rng);
    }
    return e;
}

double sample_corr(const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = stats::mean(x), my = stats::mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(EqualWeight, SumsToOne) {
    const auto w = equal_weight(4);
    ASSERT_EQ(w.size(), 4u);
    for (double x : w) EXPECT_DOUBLE_EQ(x, 0.25);
    EXPECT_DOUBLE_EQ(equal_weight(1)[0], 1.0);
    EXPECT_THROW(equal_weight(0), std::invalid_argument);
}

TEST(StaticSaa, ExpandingWindowKeepsEveryRow) {
    std::vector<std::vector<double>> hist(165, std::vector<double>{0.01, -0.02});
    auto s = static_saa_scenarios(hist, {"A", "B"});
    EXPECT_EQ(s.rows, 165u);
    EXPECT_EQ(s.cols(), 2u);
    hist.push_back({0.5, 0.5});
    s = static_saa_scenarios(hist, {"A", "B"});
    EXPECT_EQ(s.rows, 166u);
    EXPECT_DOUBLE_EQ(s.at(165, 1), 0.5);
    EXPECT_THROW(static_saa_scenarios({}, {"A"}), DataError);
}

TEST(Garch, VarianceRecursion) {
    const GarchParams p{0.1, 0.2, 0.5};
    const std::vector<double> x{1.0, -2.0, 0.5};
    const auto s2 = garch_variance(p, x);
    ASSERT_EQ(s2.size(), 4u);
    const double var = stats::variance(x);
    EXPECT_DOUBLE_EQ(s2[0], var);
    EXPECT_NEAR(s2[1], 0.1 + 0.2 * 1.0 + 0.5 * s2[0], 1e-14);
    EXPECT_NEAR(s2[2], 0.1 + 0.2 * 4.0 + 0.5 * s2[1], 1e-14);
    EXPECT_NEAR(s2[3], 0.1 + 0.2 * 0.25 + 0.5 * s2[2], 1e-14);
}

TEST(Garch, RejectsBadParameters) {
    EXPECT_THROW((GarchParams{0.1, 0.6, 0.5}.validate()), NumericError);
    EXPECT_THROW((GarchParams{-0.1, 0.1, 0.5}.validate()), NumericError);
    EXPECT_NO_THROW((GarchParams{0.1, 0.1, 0.5}.validate()));
}

TEST(Garch, ShortOrConstantSeries) {
    EXPECT_THROW(fit_garch(std::vector<double>(29, 0.1)), DataError);
    EXPECT_THROW(fit_garch(std::vector<double>(100, 0.0)), NumericError);
}

TEST(Garch, IidNoiseHasLittlePersistence) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> z;
    std::vector<double> x(2000);
    for (auto& v : x) v = z(rng);
    const auto fit = fit_garch(x);
    EXPECT_LT(fit.params.a + fit.params.b, 1.0);
    EXPECT_LT(fit.params.a, 0.05);
    // unconditional level should match the sample variance
    const double uncond = fit.params.omega / (1 - fit.params.a - fit.params.b);
    EXPECT_NEAR(uncond, 1.0, 0.15);
}

TEST(Garch, RecoversParameters) {
    const GarchParams truth{0.05, 0.08, 0.90};
    const auto x = garch_simulate(truth, 5000, 21);
    const auto fit = fit_garch(x);
    EXPECT_NEAR(fit.params.a, truth.a, 0.05);
    EXPECT_NEAR(fit.params.b, truth.b, 0.05);
    EXPECT_EQ(fit.variance.size(), 5001u);
}

TEST(Garch, SimulateIsDeterministic) {
    const GarchParams p{0.05, 0.08, 0.90};
    EXPECT_EQ(garch_simulate(p, 50, 3), garch_simulate(p, 50, 3));
    EXPECT_NE(garch_simulate(p, 50, 3), garch_simulate(p, 50, 4));
}

TEST(Dcc, ZeroDynamicsStaysAtGamma) {
    const auto e = correlated_pairs(0.3, 200, 1, 2);
    const auto rho = dcc_correlation(0.0, 0.0, 0.4, e[0], e[1]);
    ASSERT_EQ(rho.size(), 201u);
    for (double r : rho) EXPECT_NEAR(r, 0.4, 1e-14);
}

TEST(Dcc, CorrelationStaysInsideUnitInterval) {
    const auto e = correlated_pairs(0.8, 500, 1, 5);
    for (double a : {0.01, 0.1, 0.3}) {
        for (double b : {0.0, 0.5, 0.69}) {
            for (double r : dcc_correlation(a, b, 0.8, e[0], e[1])) {
                EXPECT_LT(std::abs(r), 1.0);
            }
        }
    }
}

TEST(Dcc, GammaIsTheSampleCorrelation) {
    const auto e = correlated_pairs(0.5, 3000, 3, 9);
    const auto fit = fit_dcc(e[0], {e[1], e[2], e[3]});
    ASSERT_EQ(fit.params.gamma.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(fit.params.gamma[i], sample_corr(e[0], e[i + 1]), 1e-12);
        EXPECT_NEAR(fit.params.gamma[i], 0.5, 0.05);
        EXPECT_EQ(fit.rho[i].size(), 3001u);
    }
    // constant correlation: little dynamics
    EXPECT_LT(fit.params.a, 0.05);
}

TEST(Dcc, SimulationMoments) {
    DccForecast f;
    f.mean_market = 0.0;
    f.sigma_market = 1.0;
    f.means = {0.0, 0.0, 0.0};
    f.sigma = {1.0, 1.0, 1.0};
    f.rho = {0.0, 1.0, 0.6};
    const std::size_t n = 20000;
    const auto s = dcc_simulate(f, {"A", "B", "C"}, n, 13);
    ASSERT_EQ(s.rows, n);
    ASSERT_EQ(s.market.size(), n);
    std::vector<double> m(n), a(n), b(n), c(n);
    for (std::size_t r = 0; r < n; ++r) {
        m[r] = s.market[r];
        a[r] = s.at(r, 0);
        b[r] = s.at(r, 1);
        c[r] = s.at(r, 2);
    }
    const double tol = 4.0 / std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(sample_corr(m, a), 0.0, tol);
    for (std::size_t r = 0; r < n; ++r) EXPECT_NEAR(b[r], m[r], 1e-12);
    EXPECT_NEAR(sample_corr(m, c), 0.6, tol);
    EXPECT_NEAR(stats::variance(c), 1.0, 0.05);
}

TEST(Dcc, ForecastValidation) {
    DccForecast f;
    f.sigma_market = 1.0;
    f.means = {0.0};
    f.sigma = {1.0};
    f.rho = {1.2};
    EXPECT_THROW(f.validate(), NumericError);
    f.rho = {0.2};
    f.sigma = {0.0};
    EXPECT_THROW(f.validate(), NumericError);
}

TEST(DccMm, NeedsThirtyMonths) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(0.0, 0.05);
    std::vector<std::vector<double>> rows(kDccMinMonths - 1, std::vector<double>(3));
    for (auto& r : rows)
        for (auto& v : r) v = z(rng);
    EXPECT_THROW(fit_dcc_mm(rows), DataError);
}

TEST(DccMm, ForecastShapes) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 0.05);
    std::vector<std::vector<double>> rows(60, std::vector<double>(3));
    for (auto& r : rows) {
        r[2] = z(rng);
        r[0] = 0.01 + 0.5 * r[2] + z(rng);
        r[1] = -0.01 + z(rng);
    }
    const auto model = fit_dcc_mm(rows);
    ASSERT_EQ(model.forecast.means.size(), 2u);
    EXPECT_EQ(model.stocks.size(), 2u);
    double m0 = 0;
    for (const auto& r : rows) m0 += r[0];
    EXPECT_NEAR(model.forecast.means[0], m0 / 60, 1e-12);
    EXPECT_NO_THROW(model.forecast.validate());
    EXPECT_GT(model.forecast.rho[0], model.forecast.rho[1]);
    const auto again = fit_dcc_mm(rows, 2);
    EXPECT_EQ(again.to_json({"A", "B"}), model.to_json({"A", "B"}));
}
