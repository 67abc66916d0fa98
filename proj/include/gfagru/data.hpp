#pragma once

// Price ingestion, returns, one-month labels, feature windows, chronological
// splits and a synthetic data generator.
//
// Indexing: prices P_0..P_D, returns r_1..r_D with r_d = P_d / P_{d-1} - 1
// stored at position d - 1. An anchor a uses returns r_{a-T+1}..r_a as
// features and P_{a+21} / P_a - 1 as label.

#include "gfagru/autodiff.hpp"
#include "gfagru/errors.hpp"
#include "gfagru/gen_factor.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gfagru {

constexpr std::size_t kMonthDays = 21;

struct PriceTable {
    std::vector<std::string> dates;
    std::vector<std::string> tickers;
    std::vector<double> prices;  // dates x tickers, row-major

    std::size_t rows() const noexcept { return dates.size(); }
    std::size_t cols() const noexcept { return tickers.size(); }
    double at(std::size_t r, std::size_t c) const { return prices[r * cols() + c]; }
    std::vector<double> column(std::size_t c) const;
    std::size_t column_index(const std::string& ticker) const;

    /// Strictly increasing ISO dates, positive prices, consistent sizes.
    void validate() const;
};

struct IngestReport {
    std::vector<std::string> dropped;  // tickers with incomplete histories
};

/// First column ISO date, one column per ticker. Tickers with any empty or
/// "NA" cell are dropped; malformed numbers and nonpositive prices are errors.
PriceTable read_prices_csv(std::istream& in, IngestReport* report = nullptr);
PriceTable read_prices_file(const std::string& path, IngestReport* report = nullptr);
void write_prices_csv(std::ostream& out, const PriceTable& table);

std::vector<double> to_returns(std::span<const double> prices);

/// P_{anchor+horizon} / P_anchor - 1.
double monthly_label(std::span<const double> prices, std::size_t anchor, std::size_t horizon = kMonthDays);

/// 2 x T (market only) or 4 x T (market then stock). Rows: returns, squared
/// deviations from the window mean.
Tensor build_features(std::span<const double> market_returns, std::span<const double> stock_returns,
                      std::size_t anchor, std::size_t window);

struct SamplePair {
    Tensor features;
    double label = 0.0;
    std::size_t anchor = 0;
};

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
    std::optional<std::size_t> train_rows;  // explicit count of training return rows
    std::optional<std::string> split_date;  // first test date
    double train_fraction = 0.6;
    double validation_fraction = 0.2;
};

struct Split {
    std::size_t total_rows = 0;       // return rows
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::size_t validation_rows = 0;  // tail of the training rows
};

/// `dates` are the price dates (return row d has date dates[d]).
Split split_rows(std::size_t total_rows, const SplitSpec& spec, std::span<const std::string> dates = {});

/// Anchors a in [window, train_rows - horizon].
std::vector<std::size_t> training_anchors(const Split& split, std::size_t window,
                                          std::size_t horizon = kMonthDays);
/// a = train_rows + horizon k while a + horizon <= total_rows. A trailing
/// partial month is dropped.
std::vector<std::size_t> rebalance_anchors(const Split& split, std::size_t horizon = kMonthDays);

/// Number of training samples whose anchor falls inside the validation rows.
std::size_t validation_count(const Split& split, std::span<const std::size_t> anchors);

// ---------------------------------------------------------------------------
// Panels
// ---------------------------------------------------------------------------

struct ReturnPanel {
    std::vector<std::string> dates;  // price dates
    std::vector<std::string> tickers;
    std::vector<double> market_prices;
    std::vector<double> market_returns;
    std::vector<std::vector<double>> stock_prices;
    std::vector<std::vector<double>> stock_returns;

    std::size_t return_rows() const noexcept { return market_returns.size(); }
    std::size_t stocks() const noexcept { return tickers.size(); }
};

ReturnPanel make_panel(const PriceTable& table, const std::string& market_ticker);

/// `limit` is the last price index any label may touch; a sample crossing it is an error.
std::vector<SamplePair> market_samples(const ReturnPanel& panel, std::span<const std::size_t> anchors,
                                       std::size_t window, std::size_t limit,
                                       std::size_t horizon = kMonthDays);
std::vector<SamplePair> stock_samples(const ReturnPanel& panel, std::size_t stock,
                                      std::span<const std::size_t> anchors, std::size_t window,
                                      std::size_t limit, std::size_t horizon = kMonthDays);

/// Non-overlapping monthly returns (rows) of every stock, over the price
/// indices start, start + 21, ... up to `end`.
std::vector<std::vector<double>> monthly_returns(const ReturnPanel& panel, std::size_t start, std::size_t end,
                                                 bool include_market = false,
                                                 std::size_t horizon = kMonthDays);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthRegime {
    std::size_t start_day = 0;  // first return row using this model
    ForecastedFactorModel model;
};

struct SynthSpec {
    std::vector<SynthRegime> regimes;  // daily-scale models, sorted by start_day
    std::size_t days = 0;              // return rows
    std::string market_ticker = "MKT";
    std::string start_date = "2000-01-03";
    double start_price = 100.0;

    void validate() const;
    /// Constant daily model for `stocks` names; tails shared by all stocks.
    /// Alphas absorb the mean of the transforms, so expected daily returns
    /// are 1e-4 to 3e-4 for the stocks and 3e-4 for the market.
    static SynthSpec constant(std::size_t stocks, std::size_t days, const TailParams& market_tail,
                              const TailParams& stock_tail);
};

/// Prices with the market index in the first column.
PriceTable synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// Ground truth as JSON text.
std::string synth_manifest(const SynthSpec& spec, std::uint64_t seed);
SynthSpec synth_spec_from_json(const std::string& text);

/// Next weekday after an ISO date.
std::string next_business_day(const std::string& iso_date);
bool valid_iso_date(const std::string& text);

}  // namespace gfagru
