#include "gfagru/backtest.hpp"

#include "gfagru/benchmarks.hpp"
#include "gfagru/errors.hpp"
#include "gfagru/stats.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace gfagru;

namespace {

std::vector<bool> isolated(std::size_t hits, std::size_t length = 103) {
    std::vector<bool> v(length, false);
    for (std::size_t i = 0; i < hits; ++i) v[10 + 20 * i] = true;
    return v;
}

std::vector<double> random_path(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::student_t_distribution<double> t(4.0);
    std::vector<double> r(n);
    for (auto& x : r) x = 0.005 + 0.04 * t(rng);
    return r;
}

ForecastedFactorModel gaussian_model(double alpha, double beta) {
    ForecastedFactorModel m;
    m.market = {alpha, beta};
    m.stocks.push_back({"S01", {0.0, 0.0, beta}, {}, {}});
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

TEST(Metrics, ConstantPath) {
    const std::vector<double> r(24, 0.01);
    const auto m = compute_metrics(r);
    EXPECT_NEAR(m.av, 0.12, 1e-12);
    EXPECT_NEAR(m.sd, 0.0, 1e-12);
    EXPECT_FALSE(m.ir.has_value());
    EXPECT_FALSE(m.sk.has_value());
    EXPECT_DOUBLE_EQ(m.md, 0.0);
    EXPECT_NEAR(m.es, -0.12, 1e-12);
}

TEST(Metrics, Drawdown) {
    EXPECT_NEAR(max_drawdown(std::vector<double>{-0.1, 0.1}), 0.1, 1e-12);
    EXPECT_DOUBLE_EQ(max_drawdown(std::vector<double>{0.01, 0.02, 0.0, 0.05}), 0.0);
    // peak 1.2, trough 1.2 * 0.5 * 0.9
    EXPECT_NEAR(max_drawdown(std::vector<double>{0.2, -0.5, -0.1, 0.3}), 1.0 - 0.45, 1e-12);
}

TEST(Metrics, TwentyMonthTailIsTheWorstMonth) {
    // with 20 observations the 95% tail holds exactly one month
    const auto r = random_path(20, 3);
    const auto m = compute_metrics(r);
    const double worst = -*std::min_element(r.begin(), r.end());
    EXPECT_NEAR(m.es, 12.0 * worst, 1e-12);
    const double mu = stats::mean(r);
    ASSERT_TRUE(m.cr.has_value());
    EXPECT_NEAR(*m.cr, mu / worst, 1e-12);

    double s = 0;
    for (double x : r)
        if (-x < worst) s += x;
    ASSERT_TRUE(m.rr.has_value());
    EXPECT_NEAR(*m.rr, (s / 19.0) / worst, 1e-12);

    double m2 = 0, m3 = 0;
    for (double x : r) {
        m2 += (x - mu) * (x - mu) / 20.0;
        m3 += std::pow(x - mu, 3) / 20.0;
    }
    EXPECT_NEAR(m.sd, std::sqrt(12.0 * m2), 1e-12);
    EXPECT_NEAR(*m.ir, 12.0 * mu / std::sqrt(12.0 * m2), 1e-12);
    EXPECT_NEAR(*m.sk, m3 / std::pow(m2, 1.5), 1e-12);
}

TEST(Metrics, NeedsTwoReturns) { EXPECT_THROW(compute_metrics(std::vector<double>{0.1}), std::invalid_argument); }

TEST(MetricsProperty, OrderFreeStatisticsIgnorePermutation) {
    for (unsigned seed = 0; seed < 20; ++seed) {
        auto r = random_path(60, seed);
        const auto a = compute_metrics(r);
        std::shuffle(r.begin(), r.end(), std::mt19937_64(seed + 100));
        const auto b = compute_metrics(r);
        EXPECT_NEAR(a.av, b.av, 1e-12);
        EXPECT_NEAR(a.sd, b.sd, 1e-12);
        EXPECT_NEAR(a.es, b.es, 1e-12);
        EXPECT_NEAR(*a.sk, *b.sk, 1e-9);
        EXPECT_NEAR(*a.rr, *b.rr, 1e-12);
    }
}

TEST(MetricsProperty, ShortfallDominatesMeanLoss) {
    for (unsigned seed = 0; seed < 50; ++seed) {
        const auto r = random_path(40 + seed, seed);
        const auto m = compute_metrics(r);
        EXPECT_GE(m.es, -m.av - 1e-12);
        EXPECT_GE(m.md, 0.0);
        EXPECT_LE(m.md, 1.0);
    }
}

TEST(MetricsProperty, PositiveScaling) {
    const auto r = random_path(50, 8);
    std::vector<double> s(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) s[i] = 0.5 * r[i];
    const auto a = compute_metrics(r), b = compute_metrics(s);
    EXPECT_NEAR(b.av, 0.5 * a.av, 1e-12);
    EXPECT_NEAR(b.sd, 0.5 * a.sd, 1e-12);
    EXPECT_NEAR(b.es, 0.5 * a.es, 1e-12);
    EXPECT_NEAR(*b.ir, *a.ir, 1e-12);
    EXPECT_NEAR(*b.cr, *a.cr, 1e-12);
    EXPECT_NEAR(*b.rr, *a.rr, 1e-12);
}

// ---------------------------------------------------------------------------
// Coverage
// ---------------------------------------------------------------------------

TEST(Coverage, ReferenceValuesAtOnePercent) {
    struct Row {
        std::size_t x;
        double pof, cci, cc;
    };
    for (const Row& row : {Row{0, 0.1502, 1.0, 0.3552}, Row{1, 0.9762, 0.8881, 0.9897},
                           Row{2, 0.395, 0.7773, 0.6691}, Row{3, 0.1129, 0.6698, 0.26}}) {
        const auto c = coverage_tests(isolated(row.x), 0.01);
        EXPECT_EQ(c.violations, row.x);
        EXPECT_NEAR(c.p_pof, row.pof, 5e-5) << row.x;
        EXPECT_NEAR(c.p_cci, row.cci, 5e-5) << row.x;
        EXPECT_NEAR(c.p_cc, row.cc, 5e-5) << row.x;
    }
}

TEST(Coverage, ReferenceValuesAtFiveAndTenPercent) {
    auto c = coverage_tests(isolated(5), 0.05);
    EXPECT_NEAR(c.p_pof, 0.9457, 5e-5);
    EXPECT_NEAR(c.p_cc, 0.7709, 5e-5);
    c = coverage_tests(isolated(0), 0.05);
    EXPECT_NEAR(c.p_pof, 0.0012, 5e-5);
    EXPECT_NEAR(c.p_cc, 0.0051, 5e-5);
    c = coverage_tests(isolated(4), 0.10);
    EXPECT_NEAR(c.p_pof, 0.0195, 5e-5);
    EXPECT_NEAR(c.p_cc, 0.0556, 5e-5);
}

TEST(Coverage, ClusteredViolations) {
    std::vector<bool> v(103, false);
    v[10] = v[11] = v[50] = true;
    const auto c = coverage_tests(v, 0.01);
    EXPECT_NEAR(c.p_pof, 0.1129, 5e-5);
    EXPECT_NEAR(c.p_cci, 0.055, 5e-5);
    EXPECT_NEAR(c.p_cc, 0.0452, 5e-5);
}

TEST(Coverage, RejectsBadInput) {
    EXPECT_THROW(coverage_tests({true}, 0.01), std::invalid_argument);
    EXPECT_THROW(coverage_tests(isolated(1), 0.0), std::invalid_argument);
    EXPECT_THROW(coverage_tests(isolated(1), 1.0), std::invalid_argument);
}

TEST(Chi2, MatchesSeriesOracle) {
    for (double x : {0.0, 0.01, 0.5, 1.0, 2.5, 3.84, 7.0, 15.0, 40.0}) {
        EXPECT_NEAR(stats::chi2_sf(x, 1), oracle::chi2_sf_series(x, 1), 1e-6) << x;
        EXPECT_NEAR(stats::chi2_sf(x, 2), oracle::chi2_sf_series(x, 2), 1e-6) << x;
    }
    EXPECT_NEAR(stats::chi2_sf(3.841458820694124, 1), 0.05, 1e-9);
    EXPECT_NEAR(stats::chi2_sf(5.991464547107979, 2), 0.05, 1e-9);
    EXPECT_THROW(stats::chi2_sf(1.0, 3), std::invalid_argument);
}

TEST(CoverageProperty, StatisticsAreNonNegative) {
    std::mt19937_64 rng(5);
    std::bernoulli_distribution b(0.07);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<bool> v(50 + trial);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = b(rng);
        const auto c = coverage_tests(v, 0.05);
        EXPECT_GE(c.lr_pof, 0.0);
        EXPECT_GE(c.lr_cci, 0.0);
        EXPECT_LE(c.p_cc, 1.0);
        EXPECT_GE(c.p_cc, 0.0);
    }
}

// ---------------------------------------------------------------------------
// VaR forecasts
// ---------------------------------------------------------------------------

TEST(VarForecast, GaussianQuantile) {
    const std::vector<ForecastedFactorModel> f{gaussian_model(0.01, 0.02)};
    const auto s = var_forecast_series(f, 0.99, 200000, 4);
    ASSERT_EQ(s.assets.size(), 2u);
    EXPECT_EQ(s.assets[0], "market");
    EXPECT_EQ(s.assets[1], "S01");
    const double z99 = 2.3263478740408408;
    EXPECT_NEAR(s.var[0][0], 1.5 * 0.02 * z99 - 0.01, 1e-3);
    EXPECT_NEAR(s.var[0][1], 1.5 * 0.02 * z99, 1e-3);
}

TEST(VarForecast, NearlyDeterministicStock) {
    auto m = gaussian_model(0.0, 0.02);
    m.stocks[0].theta = {0.03, 0.0, 1e-12};
    const std::vector<ForecastedFactorModel> f{m, m};
    const auto s = var_forecast_series(f, 0.95, 1000, 1);
    for (const auto& row : s.var) EXPECT_NEAR(row[1], -0.03, 1e-10);
}

TEST(VarForecast, DeterministicAcrossWorkers) {
    std::vector<ForecastedFactorModel> f;
    for (int d = 0; d < 5; ++d) f.push_back(gaussian_model(0.001 * d, 0.02 + 0.001 * d));
    const auto a = var_forecast_series(f, 0.99, 5000, 9, 1);
    const auto b = var_forecast_series(f, 0.99, 5000, 9, 3);
    EXPECT_EQ(a.var, b.var);
}

TEST(VarForecast, Violations) {
    VarSeries s;
    s.assets = {"market", "A"};
    s.var = {{0.05, 0.10}, {0.05, 0.10}};
    const auto v = var_violations(s, {{-0.06, -0.05}, {0.01, -0.11}});
    EXPECT_EQ(v[0], (std::vector<bool>{true, false}));
    EXPECT_EQ(v[1], (std::vector<bool>{false, true}));
    EXPECT_THROW(var_violations(s, {{0.0, 0.0}}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Backtest
// ---------------------------------------------------------------------------

namespace {

struct BacktestFixture {
    ReturnPanel panel;
    Split split;
};

const BacktestFixture& bt_fixture() {
    static const BacktestFixture f = [] {
        BacktestFixture x;
        x.panel = make_panel(synth_generate(SynthSpec::constant(3, 900, {1.5, 2}, {1.5, 1.5}), 5), "MKT");
        SplitSpec ss;
        ss.train_rows = 690;
        x.split = split_rows(x.panel.return_rows(), ss);
        return x;
    }();
    return f;
}

BacktestConfig small_bt() {
    BacktestConfig c;
    c.q = 0.95;
    c.scenarios = 500;
    c.targets = {Target::parse("0.002"), Target::parse("ew")};
    c.repetitions = 2;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(Target, Parse) {
    EXPECT_TRUE(Target::parse("ew").ew);
    EXPECT_TRUE(Target::parse("ew-target").ew);
    EXPECT_DOUBLE_EQ(Target::parse("0.02").value, 0.02);
    EXPECT_THROW(Target::parse("two"), ConfigError);
    EXPECT_EQ(Target::parse("ew").label(), "ew");
}

TEST(Backtest, RealizedMonth) {
    const auto& f = bt_fixture();
    const auto r = realized_month(f.panel, 700, true);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_NEAR(r[0], f.panel.market_prices[721] / f.panel.market_prices[700] - 1.0, 1e-15);
    EXPECT_NEAR(r[3], f.panel.stock_prices[2][721] / f.panel.stock_prices[2][700] - 1.0, 1e-15);
    EXPECT_THROW(realized_month(f.panel, 880), DataError);
}

TEST(Backtest, EqualWeightIsTheCrossSectionalMean) {
    const auto& f = bt_fixture();
    const auto report = run_backtest(f.panel, f.split, {{"EW", StrategyKind::ew, nullptr}}, small_bt());
    const auto anchors = rebalance_anchors(f.split);
    ASSERT_EQ(report.dates.size(), anchors.size());
    ASSERT_EQ(report.results.size(), 1u);
    const auto& res = report.results[0];
    EXPECT_EQ(res.repetitions, 1u);
    for (std::size_t d = 0; d < anchors.size(); ++d) {
        const auto r = realized_month(f.panel, anchors[d]);
        EXPECT_NEAR(res.returns[d], (r[0] + r[1] + r[2]) / 3.0, 1e-14);
        for (double w : res.weights[d]) EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
    }
}

TEST(Backtest, BenchmarksAreDeterministicAndFeasible) {
    const auto& f = bt_fixture();
    const std::vector<Strategy> strategies{{"SAA", StrategyKind::saa, nullptr},
                                           {"DCC-MM", StrategyKind::dcc_mm, nullptr}};
    const auto a = run_backtest(f.panel, f.split, strategies, small_bt());
    const auto b = run_backtest(f.panel, f.split, strategies, small_bt());
    ASSERT_EQ(a.results.size(), 4u);
    std::ostringstream sa, sb;
    write_metrics_csv(sa, a, "h");
    write_metrics_csv(sb, b, "h");
    EXPECT_EQ(sa.str(), sb.str());
    for (const auto& res : a.results) {
        for (const auto& w : res.weights) {
            double sum = 0;
            for (double x : w) {
                EXPECT_GE(x, -1e-9);
                sum += x;
            }
            EXPECT_NEAR(sum, 1.0, 1e-8);
        }
        if (res.strategy == "SAA") {
            EXPECT_EQ(res.repetitions, 1u);
            EXPECT_FALSE(res.dispersion.has_value());
        } else {
            EXPECT_EQ(res.repetitions, 2u);
            EXPECT_TRUE(res.dispersion.has_value());
        }
    }
}

TEST(Backtest, UnreachableTargetFallsBackToEqualWeight) {
    const auto& f = bt_fixture();
    auto cfg = small_bt();
    cfg.targets = {Target::parse("0.9")};
    cfg.repetitions = 1;
    const auto report = run_backtest(f.panel, f.split, {{"SAA", StrategyKind::saa, nullptr}}, cfg);
    const auto& res = report.results[0];
    EXPECT_EQ(res.fallbacks, report.dates.size());
    EXPECT_EQ(report.events.size(), report.dates.size());
    for (const auto& w : res.weights)
        for (double x : w) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
    std::ostringstream ev;
    write_events_csv(ev, report, "abc");
    EXPECT_EQ(ev.str().rfind("# config_hash=abc\n", 0), 0u);
}

TEST(Backtest, ConfigErrors) {
    const auto& f = bt_fixture();
    auto cfg = small_bt();
    EXPECT_THROW(run_backtest(f.panel, f.split, {}, cfg), ConfigError);
    EXPECT_THROW(run_backtest(f.panel, f.split, {{"Mine", StrategyKind::gf_agru, nullptr}}, cfg), ConfigError);
    cfg.targets.clear();
    EXPECT_THROW(run_backtest(f.panel, f.split, {{"SAA", StrategyKind::saa, nullptr}}, cfg), ConfigError);
}

TEST(Backtest, ReportFiles) {
    const auto& f = bt_fixture();
    auto cfg = small_bt();
    cfg.repetitions = 1;
    const auto report = run_backtest(f.panel, f.split, {{"EW", StrategyKind::ew, nullptr}}, cfg);
    std::ostringstream m, w, wl;
    write_metrics_csv(m, report, "h1");
    write_weights_csv(w, report, "h1");
    write_wealth_csv(wl, report, "h1");
    for (const auto* s : {&m, &w, &wl}) EXPECT_EQ(s->str().rfind("# config_hash=h1\n", 0), 0u);
    // constant-weight EW: dispersion cells are missing
    EXPECT_NE(m.str().find("NA"), std::string::npos);
    const std::string weights = w.str();
    const auto lines = std::count(weights.begin(), weights.end(), '\n');
    EXPECT_EQ(static_cast<std::size_t>(lines), 2 + report.dates.size());
}
