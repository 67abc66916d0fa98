#include "gfagru/data.hpp"

#include "gfagru/csv.hpp"
#include "gfagru/json_io.hpp"
#include "gfagru/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

namespace gfagru {

// ---------------------------------------------------------------------------
// Dates
// ---------------------------------------------------------------------------

namespace {

std::optional<std::chrono::year_month_day> parse_date(const std::string& text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
        if (text[i] < '0' || text[i] > '9') return std::nullopt;
    }
    const int y = std::stoi(text.substr(0, 4));
    const unsigned m = static_cast<unsigned>(std::stoi(text.substr(5, 2)));
    const unsigned d = static_cast<unsigned>(std::stoi(text.substr(8, 2)));
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return ymd;
}

std::string format_date(std::chrono::year_month_day ymd) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

}  // namespace

bool valid_iso_date(const std::string& text) { return parse_date(text).has_value(); }

std::string next_business_day(const std::string& iso_date) {
    const auto ymd = parse_date(iso_date);
    if (!ymd) throw DataError("'" + iso_date + "' is not an ISO date");
    std::chrono::sys_days day{*ymd};
    do {
        day += std::chrono::days{1};
    } while (std::chrono::weekday{day} == std::chrono::Saturday || std::chrono::weekday{day} == std::chrono::Sunday);
    return format_date(std::chrono::year_month_day{day});
}

// ---------------------------------------------------------------------------
// PriceTable
// ---------------------------------------------------------------------------

std::vector<double> PriceTable::column(std::size_t c) const {
    if (c >= cols()) throw std::out_of_range("PriceTable: column out of range");
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, c);
    return out;
}

std::size_t PriceTable::column_index(const std::string& ticker) const {
    const auto it = std::find(tickers.begin(), tickers.end(), ticker);
    if (it == tickers.end()) throw DataError("ticker '" + ticker + "' not found in price table");
    return static_cast<std::size_t>(it - tickers.begin());
}

void PriceTable::validate() const {
    if (prices.size() != rows() * cols()) throw DataError("price table: cell count does not match shape");
    for (std::size_t r = 0; r < rows(); ++r) {
        if (!valid_iso_date(dates[r])) throw DataError("price table: '" + dates[r] + "' is not an ISO date");
        if (r > 0 && !(dates[r - 1] < dates[r])) {
            throw DataError("price table: dates not strictly increasing at '" + dates[r] + "'");
        }
    }
    for (std::size_t r = 0; r < rows(); ++r) {
        for (std::size_t c = 0; c < cols(); ++c) {
            if (!(at(r, c) > 0.0) || !std::isfinite(at(r, c))) {
                throw DataError("price table: nonpositive price for '" + tickers[c] + "' on " + dates[r]);
            }
        }
    }
}

PriceTable read_prices_csv(std::istream& in, IngestReport* report) {
    const csv::Table raw = csv::read(in);
    if (raw.header.size() < 2) throw DataError("price CSV: need a date column and at least one ticker");
    const std::size_t ncol = raw.header.size() - 1;
    std::vector<bool> keep(ncol, true);
    for (const auto& row : raw.rows) {
        for (std::size_t c = 0; c < ncol; ++c) {
            const std::string& cell = row[c + 1];
            if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") keep[c] = false;
        }
    }
    PriceTable table;
    for (std::size_t c = 0; c < ncol; ++c) {
        if (keep[c]) {
            table.tickers.push_back(raw.header[c + 1]);
        } else if (report) {
            report->dropped.push_back(raw.header[c + 1]);
        }
    }
    if (table.tickers.empty()) throw DataError("price CSV: no ticker has a complete history");
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const auto& row = raw.rows[r];
        table.dates.push_back(row[0]);
        for (std::size_t c = 0; c < ncol; ++c) {
            if (keep[c]) table.prices.push_back(csv::parse_number(row[c + 1], r + 2, c + 2));
        }
    }
    table.validate();
    return table;
}

PriceTable read_prices_file(const std::string& path, IngestReport* report) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open price file '" + path + "'");
    try {
        return read_prices_csv(in, report);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_prices_csv(std::ostream& out, const PriceTable& table) {
    std::vector<std::string> header{"date"};
    header.insert(header.end(), table.tickers.begin(), table.tickers.end());
    csv::write_row(out, header);
    for (std::size_t r = 0; r < table.rows(); ++r) {
        out << table.dates[r];
        for (std::size_t c = 0; c < table.cols(); ++c) out << ',' << csv::format_number(table.at(r, c));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Returns, labels, features
// ---------------------------------------------------------------------------

std::vector<double> to_returns(std::span<const double> prices) {
    if (prices.size() < 2) throw DataError("to_returns: need at least two prices");
    std::vector<double> out(prices.size() - 1);
    for (std::size_t i = 0; i < prices.size(); ++i) {
        if (!(prices[i] > 0.0)) throw DataError("to_returns: nonpositive price at index " + std::to_string(i));
        if (i > 0) out[i - 1] = prices[i] / prices[i - 1] - 1.0;
    }
    return out;
}

double monthly_label(std::span<const double> prices, std::size_t anchor, std::size_t horizon) {
    if (anchor + horizon >= prices.size()) {
        throw DataError("monthly_label: anchor " + std::to_string(anchor) + " + " + std::to_string(horizon) +
                        " lies beyond the last price index " + std::to_string(prices.size() - 1));
    }
    return prices[anchor + horizon] / prices[anchor] - 1.0;
}

namespace {

void feature_rows(std::span<const double> returns, std::size_t anchor, std::size_t window, Tensor& out,
                  std::size_t row) {
    // returns r_{anchor-window+1} .. r_anchor live at positions anchor-window .. anchor-1
    const std::size_t first = anchor - window;
    double mean = 0.0;
    for (std::size_t t = 0; t < window; ++t) mean += returns[first + t];
    mean /= static_cast<double>(window);
    for (std::size_t t = 0; t < window; ++t) {
        const double r = returns[first + t];
        out.at(row, t) = r;
        out.at(row + 1, t) = (r - mean) * (r - mean);
    }
}

}  // namespace

Tensor build_features(std::span<const double> market_returns, std::span<const double> stock_returns,
                      std::size_t anchor, std::size_t window) {
    if (window == 0) throw std::invalid_argument("build_features: window must be positive");
    if (anchor < window || anchor > market_returns.size()) {
        throw DataError("build_features: anchor " + std::to_string(anchor) + " has insufficient history for a " +
                        std::to_string(window) + "-day window");
    }
    const bool with_stock = !stock_returns.empty();
    if (with_stock && stock_returns.size() < anchor) throw DataError("build_features: stock history too short");
    Tensor out = Tensor::matrix(with_stock ? 4 : 2, window);
    feature_rows(market_returns, anchor, window, out, 0);
    if (with_stock) feature_rows(stock_returns, anchor, window, out, 2);
    return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

Split split_rows(std::size_t total_rows, const SplitSpec& spec, std::span<const std::string> dates) {
    Split s;
    s.total_rows = total_rows;
    if (spec.train_rows) {
        s.train_rows = *spec.train_rows;
    } else if (spec.split_date) {
        if (dates.size() != total_rows + 1) throw DataError("split: dates do not match the return rows");
        const auto it = std::lower_bound(dates.begin() + 1, dates.end(), *spec.split_date);
        if (it == dates.end()) throw DataError("split: date " + *spec.split_date + " is after the last row");
        s.train_rows = static_cast<std::size_t>(it - dates.begin()) - 1;
    } else {
        if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
            throw ConfigError("split: train fraction must lie in (0, 1)");
        }
        s.train_rows = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(total_rows)));
    }
    if (!(spec.validation_fraction >= 0.0 && spec.validation_fraction < 1.0)) {
        throw ConfigError("split: validation fraction must lie in [0, 1)");
    }
    if (s.train_rows <= kMonthDays || s.train_rows > total_rows) {
        throw DataError("split: training segment of " + std::to_string(s.train_rows) + " rows is too short");
    }
    s.test_rows = total_rows - s.train_rows;
    s.validation_rows =
        static_cast<std::size_t>(std::floor(spec.validation_fraction * static_cast<double>(s.train_rows)));
    return s;
}

std::vector<std::size_t> training_anchors(const Split& split, std::size_t window, std::size_t horizon) {
    if (split.train_rows < window + horizon) {
        throw DataError("training segment of " + std::to_string(split.train_rows) +
                        " rows is too short for window " + std::to_string(window) + " plus horizon " +
                        std::to_string(horizon));
    }
    std::vector<std::size_t> out;
    for (std::size_t a = window; a + horizon <= split.train_rows; ++a) out.push_back(a);
    return out;
}

std::vector<std::size_t> rebalance_anchors(const Split& split, std::size_t horizon) {
    std::vector<std::size_t> out;
    for (std::size_t a = split.train_rows; a + horizon <= split.total_rows; a += horizon) out.push_back(a);
    return out;
}

std::size_t validation_count(const Split& split, std::span<const std::size_t> anchors) {
    const std::size_t first_val = split.train_rows - split.validation_rows;
    return static_cast<std::size_t>(
        std::count_if(anchors.begin(), anchors.end(), [&](std::size_t a) { return a > first_val; }));
}

// ---------------------------------------------------------------------------
// Panels and samples
// ---------------------------------------------------------------------------

ReturnPanel make_panel(const PriceTable& table, const std::string& market_ticker) {
    table.validate();
    if (table.rows() < 2) throw DataError("price table needs at least two dates");
    const std::size_t m = table.column_index(market_ticker);
    ReturnPanel p;
    p.dates = table.dates;
    p.market_prices = table.column(m);
    p.market_returns = to_returns(p.market_prices);
    for (std::size_t c = 0; c < table.cols(); ++c) {
        if (c == m) continue;
        p.tickers.push_back(table.tickers[c]);
        p.stock_prices.push_back(table.column(c));
        p.stock_returns.push_back(to_returns(p.stock_prices.back()));
    }
    if (p.tickers.empty()) throw DataError("price table has no stocks besides the market column");
    return p;
}

namespace {

void check_anchor(std::size_t a, std::size_t window, std::size_t limit, std::size_t horizon) {
    if (a < window || a + horizon > limit) {
        throw DataError("sample at anchor " + std::to_string(a) + " crosses the segment boundary " +
                        std::to_string(limit));
    }
}

}  // namespace

std::vector<SamplePair> market_samples(const ReturnPanel& panel, std::span<const std::size_t> anchors,
                                       std::size_t window, std::size_t limit, std::size_t horizon) {
    std::vector<SamplePair> out;
    out.reserve(anchors.size());
    for (std::size_t a : anchors) {
        check_anchor(a, window, limit, horizon);
        out.push_back({build_features(panel.market_returns, {}, a, window),
                       monthly_label(panel.market_prices, a, horizon), a});
    }
    return out;
}

std::vector<SamplePair> stock_samples(const ReturnPanel& panel, std::size_t stock,
                                      std::span<const std::size_t> anchors, std::size_t window,
                                      std::size_t limit, std::size_t horizon) {
    if (stock >= panel.stocks()) throw std::out_of_range("stock_samples: stock index out of range");
    std::vector<SamplePair> out;
    out.reserve(anchors.size());
    for (std::size_t a : anchors) {
        check_anchor(a, window, limit, horizon);
        out.push_back({build_features(panel.market_returns, panel.stock_returns[stock], a, window),
                       monthly_label(panel.stock_prices[stock], a, horizon), a});
    }
    return out;
}

std::vector<std::vector<double>> monthly_returns(const ReturnPanel& panel, std::size_t start, std::size_t end,
                                                 bool include_market, std::size_t horizon) {
    if (end >= panel.market_prices.size()) throw DataError("monthly_returns: end beyond the price history");
    std::vector<std::vector<double>> out;
    for (std::size_t p = start; p + horizon <= end; p += horizon) {
        std::vector<double> row;
        row.reserve(panel.stocks() + 1);
        for (const auto& prices : panel.stock_prices) row.push_back(prices[p + horizon] / prices[p] - 1.0);
        if (include_market) row.push_back(panel.market_prices[p + horizon] / panel.market_prices[p] - 1.0);
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
    if (days < 2) throw ConfigError("synthetic spec: need at least two days");
    if (regimes.empty() || regimes.front().start_day != 0) {
        throw ConfigError("synthetic spec: the first regime must start at day 0");
    }
    const std::size_t stocks = regimes.front().model.stocks.size();
    for (std::size_t k = 0; k < regimes.size(); ++k) {
        const auto& m = regimes[k].model;
        if (k > 0 && regimes[k].start_day <= regimes[k - 1].start_day) {
            throw ConfigError("synthetic spec: regime start days must increase");
        }
        if (m.stocks.size() != stocks) throw ConfigError("synthetic spec: regimes disagree on the stock count");
        try {
            m.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("synthetic spec: ") + e.what());
        }
        for (std::size_t i = 0; i < stocks; ++i) {
            if (m.stocks[i].ticker != regimes.front().model.stocks[i].ticker) {
                throw ConfigError("synthetic spec: regimes disagree on tickers");
            }
        }
    }
    if (!valid_iso_date(start_date)) throw ConfigError("synthetic spec: bad start date '" + start_date + "'");
    if (!(start_price > 0.0)) throw ConfigError("synthetic spec: start price must be positive");
}

namespace {

// E[g(Z)] for standard normal Z, from E[Z e^{tZ}] = t e^{t^2 / 2}.
double g_mean(const TailParams& t, double a) {
    const double lu = std::log(t.u), lv = std::log(t.v);
    return (lu * std::exp(0.5 * lu * lu) - lv * std::exp(0.5 * lv * lv)) / a;
}

}  // namespace

SynthSpec SynthSpec::constant(std::size_t stocks, std::size_t days, const TailParams& market_tail,
                              const TailParams& stock_tail) {
    ForecastedFactorModel m;
    const double gm = g_mean(market_tail, m.scale_a);
    const double gs = g_mean(stock_tail, m.scale_a);
    m.market = MarketTheta{3e-4 - 0.006 * gm, 0.006};
    m.tail_market = market_tail;
    for (std::size_t i = 0; i < stocks; ++i) {
        StockModel s;
        s.ticker = (i + 1 < 10 ? "S0" : "S") + std::to_string(i + 1);
        const double frac = stocks > 1 ? static_cast<double>(i) / static_cast<double>(stocks - 1) : 0.5;
        const double beta = 0.004 + 0.004 * frac;
        s.theta = StockTheta{1e-4 + 2e-4 * frac - beta * gm - 0.008 * gs, beta, 0.008};
        s.tail_market = market_tail;
        s.tail_residual = stock_tail;
        m.stocks.push_back(std::move(s));
    }
    SynthSpec spec;
    spec.regimes.push_back({0, std::move(m)});
    spec.days = days;
    return spec;
}

PriceTable synth_generate(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto& first = spec.regimes.front().model;
    const std::size_t n = first.stocks.size();
    PriceTable table;
    table.tickers.push_back(spec.market_ticker);
    for (const auto& s : first.stocks) table.tickers.push_back(s.ticker);
    if (std::find(table.tickers.begin() + 1, table.tickers.end(), spec.market_ticker) != table.tickers.end()) {
        throw ConfigError("synthetic spec: market ticker collides with a stock ticker");
    }
    table.dates.reserve(spec.days + 1);
    table.prices.reserve((spec.days + 1) * (n + 1));
    std::vector<double> price(n + 1, spec.start_price);
    std::string date = spec.start_date;
    table.dates.push_back(date);
    table.prices.insert(table.prices.end(), price.begin(), price.end());

    auto rng = make_engine(seed, 0x73796e);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t regime = 0;
    for (std::size_t d = 0; d < spec.days; ++d) {
        while (regime + 1 < spec.regimes.size() && spec.regimes[regime + 1].start_day <= d) ++regime;
        const auto& m = spec.regimes[regime].model;
        const double zm = normal(rng);
        std::vector<double> r(n + 1);
        r[0] = m.market.alpha + m.market.beta * g(zm, m.tail_market, m.scale_a);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& s = m.stocks[i];
            r[i + 1] = s.theta.alpha + s.theta.beta * g(zm, s.tail_market, m.scale_a) +
                       s.theta.gamma * g(normal(rng), s.tail_residual, m.scale_a);
        }
        for (std::size_t c = 0; c <= n; ++c) {
            if (!(r[c] > -1.0)) {
                throw NumericError("synthetic data: simulated daily return of " + table.tickers[c] +
                                   " at or below -100% on day " + std::to_string(d + 1));
            }
            price[c] *= 1.0 + r[c];
        }
        date = next_business_day(date);
        table.dates.push_back(date);
        table.prices.insert(table.prices.end(), price.begin(), price.end());
    }
    return table;
}

std::string synth_manifest(const SynthSpec& spec, std::uint64_t seed) {
    nlohmann::json regimes = nlohmann::json::array();
    for (const auto& r : spec.regimes) regimes.push_back({{"start_day", r.start_day}, {"model", to_json(r.model)}});
    nlohmann::json j{{"kind", "gfagru-synthetic"},
                     {"seed", seed},
                     {"days", spec.days},
                     {"market_ticker", spec.market_ticker},
                     {"start_date", spec.start_date},
                     {"start_price", spec.start_price},
                     {"regimes", regimes}};
    return j.dump(2) + "\n";
}

SynthSpec synth_spec_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        SynthSpec spec;
        spec.days = j.at("days").get<std::size_t>();
        spec.market_ticker = j.value("market_ticker", std::string("MKT"));
        spec.start_date = j.value("start_date", std::string("2000-01-03"));
        spec.start_price = j.value("start_price", 100.0);
        for (const auto& r : j.at("regimes")) {
            spec.regimes.push_back({r.at("start_day").get<std::size_t>(), model_from_json(r.at("model"))});
        }
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic spec JSON: ") + e.what());
    }
}

}  // namespace gfagru
