#include "gfagru/benchmarks.hpp"

#include "gfagru/errors.hpp"
#include "gfagru/parallel.hpp"
#include "gfagru/rng.hpp"
#include "gfagru/stats.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <random>
#include <stdexcept>

namespace gfagru {

std::vector<double> equal_weight(std::size_t n) {
    if (n == 0) throw std::invalid_argument("equal_weight: need at least one asset");
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

ScenarioMatrix static_saa_scenarios(const std::vector<std::vector<double>>& history,
                                    const std::vector<std::string>& tickers) {
    if (history.empty()) throw DataError("static SAA: empty history");
    ScenarioMatrix s;
    s.tickers = tickers;
    s.rows = history.size();
    s.values.reserve(s.rows * tickers.size());
    for (const auto& row : history) {
        if (row.size() < tickers.size()) throw DataError("static SAA: history row is too short");
        s.values.insert(s.values.end(), row.begin(), row.begin() + static_cast<std::ptrdiff_t>(tickers.size()));
    }
    return s;
}

// ---------------------------------------------------------------------------
// GARCH(1,1)
// ---------------------------------------------------------------------------

void GarchParams::validate() const {
    if (!(omega > 0.0) || !(a >= 0.0) || !(b >= 0.0) || !(a + b < 1.0)) {
        throw NumericError("GARCH parameters out of range: omega=" + std::to_string(omega) +
                           " a=" + std::to_string(a) + " b=" + std::to_string(b));
    }
}

std::vector<double> garch_variance(const GarchParams& p, std::span<const double> series) {
    if (series.empty()) throw std::invalid_argument("garch_variance: empty series");
    std::vector<double> v(series.size() + 1);
    v[0] = stats::variance(series);
    for (std::size_t t = 1; t <= series.size(); ++t) {
        v[t] = p.omega + p.a * series[t - 1] * series[t - 1] + p.b * v[t - 1];
    }
    return v;
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr double kPersistenceCap = 0.9999;

// theta = (log(omega / var), logit(persistence / cap), logit(a / persistence))
GarchParams garch_from_theta(std::span<const double> th, double var) {
    const double psi = kPersistenceCap * logistic(th[1]);
    const double phi = logistic(th[2]);
    return GarchParams{var * std::exp(th[0]), psi * phi, psi * (1.0 - phi)};
}

double garch_loglik(const GarchParams& p, std::span<const double> series) {
    const auto v = garch_variance(p, series);
    double ll = 0.0;
    for (std::size_t t = 0; t < series.size(); ++t) {
        if (!(v[t] > 0.0)) return -std::numeric_limits<double>::infinity();
        ll -= 0.5 * (std::log(v[t]) + series[t] * series[t] / v[t]);
    }
    return ll;
}

double pair_loglik(std::span<const double> rho, std::span<const double> e1, std::span<const double> e2) {
    double ll = 0.0;
    for (std::size_t t = 0; t < e1.size(); ++t) {
        const double one = 1.0 - rho[t] * rho[t];
        if (!(one > 0.0)) return -std::numeric_limits<double>::infinity();
        ll -= 0.5 * (std::log(one) + (e1[t] * e1[t] + e2[t] * e2[t] - 2.0 * rho[t] * e1[t] * e2[t]) / one);
    }
    return ll;
}

}  // namespace

GarchFit fit_garch(std::span<const double> series) {
    if (series.size() < 30) throw DataError("fit_garch: need at least 30 observations");
    for (double x : series) {
        if (!std::isfinite(x)) throw DataError("fit_garch: non-finite observation");
    }
    const double var = stats::variance(series);
    if (!(var > 1e-300)) throw NumericError("fit_garch: series has zero variance");
    auto objective = [&](std::span<const double> th) {
        return -garch_loglik(garch_from_theta(th, var), series) / static_cast<double>(series.size());
    };
    GarchFit best;
    best.loglik = -std::numeric_limits<double>::infinity();
    bool any = false;
    // Starts ordered by persistence; a later start must win clearly.
    for (double psi : {0.1, 0.5, 0.9, 0.97}) {
        const double phi = 0.1;
        std::vector<double> th0{std::log(1.0 - psi), logit(psi / kPersistenceCap), logit(phi)};
        const auto r = stats::minimize_bfgs(objective, th0);
        const GarchParams p = garch_from_theta(r.x, var);
        const double ll = garch_loglik(p, series);
        if (!std::isfinite(ll)) continue;
        if (!any || ll > best.loglik + 1e-3) {
            best.params = p;
            best.loglik = ll;
            best.iterations = r.iterations;
            any = true;
        }
    }
    if (!any) throw NumericError("fit_garch: optimizer failed from every start (variance " + std::to_string(var) + ")");
    best.params.validate();
    best.variance = garch_variance(best.params, series);
    return best;
}

std::vector<double> garch_simulate(const GarchParams& p, std::size_t n, std::uint64_t seed) {
    p.validate();
    auto eng = make_engine(seed, 0);
    std::normal_distribution<double> z;
    std::vector<double> out(n);
    double v = p.omega / (1.0 - p.a - p.b);
    for (std::size_t t = 0; t < n; ++t) {
        out[t] = std::sqrt(v) * z(eng);
        v = p.omega + p.a * out[t] * out[t] + p.b * v;
    }
    return out;
}

// ---------------------------------------------------------------------------
// DCC
// ---------------------------------------------------------------------------

void DccParams::validate() const {
    if (!(a >= 0.0) || !(b >= 0.0) || !(a + b < 1.0)) {
        throw NumericError("DCC parameters out of range: a=" + std::to_string(a) + " b=" + std::to_string(b));
    }
    for (double g : gamma) {
        if (!(std::abs(g) < 1.0)) throw NumericError("DCC: Gamma is not positive definite (off-diagonal " +
                                                     std::to_string(g) + ")");
    }
}

std::vector<double> dcc_correlation(double a, double b, double gamma, std::span<const double> e_market,
                                    std::span<const double> e_stock) {
    if (e_market.size() != e_stock.size()) throw std::invalid_argument("dcc_correlation: length mismatch");
    const double c = 1.0 - a - b;
    double q11 = 1.0, q12 = gamma, q22 = 1.0;
    std::vector<double> rho(e_market.size() + 1);
    for (std::size_t t = 0; t <= e_market.size(); ++t) {
        rho[t] = q12 / std::sqrt(q11 * q22);
        if (t == e_market.size()) break;
        const double x = e_market[t], y = e_stock[t];
        q11 = c + a * x * x + b * q11;
        q12 = c * gamma + a * x * y + b * q12;
        q22 = c + a * y * y + b * q22;
    }
    return rho;
}

DccFit fit_dcc(std::span<const double> e_market, const std::vector<std::vector<double>>& e_stocks) {
    if (e_market.size() < 2) throw DataError("fit_dcc: need at least two residuals");
    DccFit fit;
    for (const auto& e : e_stocks) {
        if (e.size() != e_market.size()) throw std::invalid_argument("fit_dcc: residual length mismatch");
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        const auto n = static_cast<double>(e.size());
        for (std::size_t t = 0; t < e.size(); ++t) {
            sx += e_market[t];
            sy += e[t];
            sxx += e_market[t] * e_market[t];
            syy += e[t] * e[t];
            sxy += e_market[t] * e[t];
        }
        const double cov = sxy / n - sx / n * sy / n;
        const double vx = sxx / n - sx / n * sx / n;
        const double vy = syy / n - sy / n * sy / n;
        const double g = cov / std::sqrt(vx * vy);
        if (!(std::abs(g) < 1.0)) {
            throw NumericError("fit_dcc: Gamma is not positive definite (sample correlation " + std::to_string(g) + ")");
        }
        fit.params.gamma.push_back(g);
    }
    auto total = [&](double a, double b) {
        double ll = 0.0;
        for (std::size_t i = 0; i < e_stocks.size(); ++i) {
            const auto rho = dcc_correlation(a, b, fit.params.gamma[i], e_market, e_stocks[i]);
            ll += pair_loglik(rho, e_market, e_stocks[i]);
        }
        return ll;
    };
    const double scale = static_cast<double>(e_market.size() * std::max<std::size_t>(1, e_stocks.size()));
    auto objective = [&](std::span<const double> th) {
        const double psi = kPersistenceCap * logistic(th[0]);
        const double phi = logistic(th[1]);
        return -total(psi * phi, psi * (1.0 - phi)) / scale;
    };
    fit.loglik = total(0.0, 0.0);  // constant correlation baseline
    for (double psi : {0.1, 0.5, 0.9}) {
        const auto r = stats::minimize_bfgs(objective, {logit(psi / kPersistenceCap), logit(0.1)});
        const double p = kPersistenceCap * logistic(r.x[0]);
        const double f = logistic(r.x[1]);
        const double ll = total(p * f, p * (1.0 - f));
        if (std::isfinite(ll) && ll > fit.loglik + 1e-9 * scale) {
            fit.loglik = ll;
            fit.params.a = p * f;
            fit.params.b = p * (1.0 - f);
        }
    }
    fit.params.validate();
    for (std::size_t i = 0; i < e_stocks.size(); ++i) {
        fit.rho.push_back(dcc_correlation(fit.params.a, fit.params.b, fit.params.gamma[i], e_market, e_stocks[i]));
    }
    return fit;
}

void DccForecast::validate() const {
    if (!(sigma_market > 0.0)) throw NumericError("DCC forecast: market sigma must be positive");
    if (sigma.size() != means.size() || rho.size() != means.size()) {
        throw std::invalid_argument("DCC forecast: field lengths differ");
    }
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw NumericError("DCC forecast: sigma must be positive");
        if (!(std::abs(rho[i]) <= 1.0)) throw NumericError("DCC forecast: |rho| must not exceed 1");
    }
}

nlohmann::json DccForecast::to_json() const {
    return {{"mean_market", mean_market}, {"sigma_market", sigma_market}, {"means", means}, {"sigma", sigma},
            {"rho", rho}};
}

ScenarioMatrix dcc_simulate(const DccForecast& f, const std::vector<std::string>& tickers, std::size_t n,
                            std::uint64_t seed) {
    f.validate();
    if (tickers.size() != f.means.size()) throw std::invalid_argument("dcc_simulate: ticker count mismatch");
    ScenarioMatrix s;
    s.tickers = tickers;
    s.rows = n;
    const std::size_t k = tickers.size();
    s.values.resize(n * k);
    s.market.resize(n);
    auto eng = make_engine(seed, 0);
    std::normal_distribution<double> z;
    for (std::size_t r = 0; r < n; ++r) {
        const double zm = z(eng);
        s.market[r] = f.mean_market + f.sigma_market * zm;
        for (std::size_t i = 0; i < k; ++i) {
            const double rho = f.rho[i];
            const double mix = rho * zm + std::sqrt(std::max(0.0, 1.0 - rho * rho)) * z(eng);
            s.values[r * k + i] = f.means[i] + f.sigma[i] * mix;
        }
    }
    return s;
}

nlohmann::json DccModel::to_json(const std::vector<std::string>& tickers) const {
    auto garch = [](const GarchParams& p) { return nlohmann::json{{"omega", p.omega}, {"a", p.a}, {"b", p.b}}; };
    nlohmann::json stocks_j = nlohmann::json::array();
    for (std::size_t i = 0; i < stocks.size(); ++i) {
        stocks_j.push_back({{"ticker", i < tickers.size() ? tickers[i] : ""},
                            {"garch", garch(stocks[i])},
                            {"gamma", dcc.params.gamma[i]}});
    }
    return {{"market_garch", garch(market)},
            {"dcc", {{"a", dcc.params.a}, {"b", dcc.params.b}}},
            {"stocks", stocks_j},
            {"forecast", forecast.to_json()}};
}

DccModel fit_dcc_mm(const std::vector<std::vector<double>>& monthly, std::size_t workers) {
    if (monthly.size() < kDccMinMonths) {
        throw DataError("DCC-MM needs at least " + std::to_string(kDccMinMonths) + " months of history, got " +
                        std::to_string(monthly.size()));
    }
    const std::size_t cols = monthly.front().size();
    if (cols < 2) throw DataError("DCC-MM: need at least one stock and the market");
    const std::size_t n_stocks = cols - 1;
    const std::size_t months = monthly.size();
    std::vector<std::vector<double>> series(cols, std::vector<double>(months));
    std::vector<double> means(cols, 0.0);
    for (std::size_t t = 0; t < months; ++t) {
        if (monthly[t].size() != cols) throw DataError("DCC-MM: ragged monthly rows");
        for (std::size_t c = 0; c < cols; ++c) series[c][t] = monthly[t][c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
        means[c] = stats::mean(series[c]);
        for (double& x : series[c]) x -= means[c];
    }
    std::vector<GarchFit> fits(cols);
    parallel_for(cols, workers, [&](std::size_t c) { fits[c] = fit_garch(series[c]); });

    auto standardize = [&](std::size_t c) {
        std::vector<double> e(months);
        for (std::size_t t = 0; t < months; ++t) e[t] = series[c][t] / std::sqrt(fits[c].variance[t]);
        return e;
    };
    const auto e_market = standardize(n_stocks);
    std::vector<std::vector<double>> e_stocks;
    for (std::size_t i = 0; i < n_stocks; ++i) e_stocks.push_back(standardize(i));

    DccModel m;
    m.market = fits[n_stocks].params;
    for (std::size_t i = 0; i < n_stocks; ++i) m.stocks.push_back(fits[i].params);
    m.dcc = fit_dcc(e_market, e_stocks);
    m.forecast.mean_market = means[n_stocks];
    m.forecast.sigma_market = std::sqrt(fits[n_stocks].variance.back());
    for (std::size_t i = 0; i < n_stocks; ++i) {
        m.forecast.means.push_back(means[i]);
        m.forecast.sigma.push_back(std::sqrt(fits[i].variance.back()));
        m.forecast.rho.push_back(m.dcc.rho[i].back());
    }
    m.forecast.validate();
    return m;
}

}  // namespace gfagru
