#pragma once

// Rolling monthly rebalancing backtest, performance metrics and VaR
// coverage tests.

#include "gfagru/cvar.hpp"
#include "gfagru/data.hpp"
#include "gfagru/gen_factor.hpp"
#include "gfagru/trainer.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gfagru {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
    double av = 0.0;  // 12 * mean
    double sd = 0.0;  // sqrt(12 * variance)
    std::optional<double> ir;
    double md = 0.0;  // on compounded wealth
    double es = 0.0;  // 12 * CVaR_95 of the loss
    std::optional<double> sk;
    std::optional<double> cr;
    std::optional<double> rr;
};

/// Monthly return path of length >= 2.
Metrics compute_metrics(std::span<const double> returns);

/// Maximum peak-to-trough decline of prod(1 + r), starting from wealth 1.
double max_drawdown(std::span<const double> returns);

// ---------------------------------------------------------------------------
// Coverage tests
// ---------------------------------------------------------------------------

struct CoverageResult {
    std::size_t violations = 0;
    double lr_pof = 0.0;
    double lr_cci = 0.0;
    double p_pof = 1.0;
    double p_cci = 1.0;
    double p_cc = 1.0;
};

/// POF, Markov independence and their sum against chi-square(1), (1), (2).
CoverageResult coverage_tests(const std::vector<bool>& violations, double p);

struct VarSeries {
    std::vector<std::string> assets;      // market first, then stocks
    std::vector<std::vector<double>> var;  // dates x assets, VaR of the loss
};

/// Empirical q-quantile (left endpoint) of simulated losses per asset and date.
VarSeries var_forecast_series(std::span<const ForecastedFactorModel> forecasts, double q, std::size_t n,
                              std::uint64_t seed, std::size_t workers = 1);

/// realized[d][k] < -var[d][k].
std::vector<std::vector<bool>> var_violations(const VarSeries& series,
                                              const std::vector<std::vector<double>>& realized);

// ---------------------------------------------------------------------------
// Backtest
// ---------------------------------------------------------------------------

enum class StrategyKind { ew, saa, dcc_mm, gf_agru };

struct Strategy {
    std::string name;
    StrategyKind kind = StrategyKind::ew;
    const TrainedEnsemble* ensemble = nullptr;  // gf_agru only
};

/// "EW", "SAA", "DCC-MM"; anything else needs an ensemble.
StrategyKind strategy_kind(const std::string& name);

/// A fixed monthly target, or the mean of the scenario means ("ew").
struct Target {
    bool ew = false;
    double value = 0.0;

    std::string label() const;
    static Target parse(const std::string& text);
};

struct BacktestConfig {
    double q = 0.95;
    std::size_t scenarios = 10000;
    std::vector<Target> targets;
    std::size_t repetitions = 1;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

struct StrategyResult {
    std::string strategy;
    std::string target;  // empty for EW
    double q = 0.0;
    std::size_t repetitions = 1;
    Metrics mean;                         // metric-wise average over repetitions
    std::optional<Metrics> dispersion;    // sample standard deviation, repetitions >= 2
    std::vector<std::vector<double>> rep_returns;
    std::vector<double> returns;          // date-wise mean over repetitions
    std::vector<std::vector<double>> weights;  // per date, first repetition
    std::size_t fallbacks = 0;
};

struct FallbackEvent {
    std::string strategy;
    std::string target;
    std::string date;
    std::size_t repetition = 0;
};

struct BacktestReport {
    std::vector<std::string> dates;  // rebalance dates
    std::vector<std::string> tickers;
    std::vector<StrategyResult> results;
    std::vector<FallbackEvent> events;
};

/// Stock returns realized over [anchor, anchor + 21].
std::vector<double> realized_month(const ReturnPanel& panel, std::size_t anchor, bool include_market = false);

/// Infeasible CVaR targets fall back to equal weights and are logged in `events`.
BacktestReport run_backtest(const ReturnPanel& panel, const Split& split, const std::vector<Strategy>& strategies,
                            const BacktestConfig& cfg);

// Report writers. Every file starts with "# config_hash=<hash>".
void write_metrics_csv(std::ostream& out, const BacktestReport& report, const std::string& hash);
void write_weights_csv(std::ostream& out, const BacktestReport& report, const std::string& hash);
void write_wealth_csv(std::ostream& out, const BacktestReport& report, const std::string& hash);
void write_events_csv(std::ostream& out, const BacktestReport& report, const std::string& hash);

}  // namespace gfagru
