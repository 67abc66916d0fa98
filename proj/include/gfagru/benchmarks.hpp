#pragma once

// Benchmark strategies: equal weight, static SAA on an expanding window of
// monthly returns, and the single-factor DCC model with GARCH(1,1)
// volatilities fitted on monthly returns (DCC-MM).

#include "gfagru/gen_factor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gfagru {

std::vector<double> equal_weight(std::size_t n);

/// Every historical row (expanding window). `history` rows are months, one
/// column per ticker.
ScenarioMatrix static_saa_scenarios(const std::vector<std::vector<double>>& history,
                                    const std::vector<std::string>& tickers);

struct GarchParams {
    double omega = 0.0;
    double a = 0.0;
    double b = 0.0;

    void validate() const;
};

struct GarchFit {
    GarchParams params;
    std::vector<double> variance;  // sigma^2_1..sigma^2_T, then the one-step forecast
    double loglik = 0.0;
    std::size_t iterations = 0;
};

/// sigma^2_1 = sample variance, then the GARCH(1,1) recursion; T + 1 entries.
std::vector<double> garch_variance(const GarchParams& p, std::span<const double> series);

/// Gaussian quasi-MLE on a de-meaned series of length >= 30.
GarchFit fit_garch(std::span<const double> series);

/// Gaussian GARCH(1,1) path of length n started at the unconditional variance.
std::vector<double> garch_simulate(const GarchParams& p, std::size_t n, std::uint64_t seed);

struct DccParams {
    double a = 0.0;
    double b = 0.0;
    std::vector<double> gamma;  // off-diagonal of Gamma_i per stock

    void validate() const;
};

struct DccFit {
    DccParams params;
    std::vector<std::vector<double>> rho;  // per stock: rho_1..rho_T, then the one-step forecast
    double loglik = 0.0;
};

/// Correlation path of one pair; Q_1 = Gamma, T + 1 entries.
std::vector<double> dcc_correlation(double a, double b, double gamma, std::span<const double> e_market,
                                    std::span<const double> e_stock);

/// Two-stage fit on standardized residuals: Gamma_i is the sample correlation,
/// (a, b) is shared by all pairs.
DccFit fit_dcc(std::span<const double> e_market, const std::vector<std::vector<double>>& e_stocks);

struct DccForecast {
    double mean_market = 0.0;
    double sigma_market = 0.0;
    std::vector<double> means;
    std::vector<double> sigma;
    std::vector<double> rho;

    void validate() const;
    nlohmann::json to_json() const;
};

/// r_M = mu_M + sigma_M Z_M, r_i = mu_i + sigma_i (rho_i Z_M + sqrt(1 - rho_i^2) Z_i).
ScenarioMatrix dcc_simulate(const DccForecast& f, const std::vector<std::string>& tickers, std::size_t n,
                            std::uint64_t seed);

struct DccModel {
    GarchParams market;
    std::vector<GarchParams> stocks;
    DccFit dcc;
    DccForecast forecast;

    nlohmann::json to_json(const std::vector<std::string>& tickers) const;
};

constexpr std::size_t kDccMinMonths = 30;

/// Fits DCC-MM on monthly rows (stocks then market as the last column) and
/// returns the one-step forecast. Means are the sample means of all rows.
DccModel fit_dcc_mm(const std::vector<std::vector<double>>& monthly, std::size_t workers = 1);

}  // namespace gfagru
