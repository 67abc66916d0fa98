#pragma once

// Heavy-tail transform g(x; u, v) = x ((u^x + v^-x) / A + 1), the factor-model
// likelihoods built on it, and scenario simulation.

#include "gfagru/autodiff.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gfagru {

constexpr double kDefaultScaleA = 4.0;
constexpr double kTailMin = 1.0;
constexpr double kTailMax = 3.0;

struct TailParams {
    double u = 1.0;  // right tail
    double v = 1.0;  // left tail

    /// Throws std::invalid_argument unless both lie in [1, 3].
    void validate() const;
};

struct MarketTheta {
    double alpha = 0.0;
    double beta = 1.0;
};

struct StockTheta {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 1.0;
};

struct StockModel {
    std::string ticker;
    StockTheta theta;
    TailParams tail_market;    // applied to the market factor inside this stock's loading
    TailParams tail_residual;  // applied to the idiosyncratic factor
};

struct ForecastedFactorModel {
    MarketTheta market;
    TailParams tail_market;
    std::vector<StockModel> stocks;
    double scale_a = kDefaultScaleA;

    void validate() const;
};

struct ScenarioMatrix {
    std::vector<std::string> tickers;
    std::size_t rows = 0;
    std::vector<double> values;  // rows x tickers.size(), row-major
    std::vector<double> market;  // optional, one entry per row

    std::size_t cols() const noexcept { return tickers.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
};

double g(double x, const TailParams& tail, double scale_a = kDefaultScaleA);
double g_prime(double x, const TailParams& tail, double scale_a = kDefaultScaleA);
/// Root of g(x) = y by bracketing and safeguarded Newton.
double g_inverse(double y, const TailParams& tail, double scale_a = kDefaultScaleA, double tol = 1e-10);

/// Z = g^-1((y - alpha) / beta).
double latent_market(double y, const MarketTheta& theta, const TailParams& tail,
                     double scale_a = kDefaultScaleA);

double market_loglik(double y, const MarketTheta& theta, const TailParams& tail,
                     double scale_a = kDefaultScaleA);

double stock_cond_loglik(double y, double z_market, const StockTheta& theta, const TailParams& tail_market,
                         const TailParams& tail_residual, double scale_a = kDefaultScaleA);

/// Rows are generated in blocks with independent streams, so the result
/// depends only on (model, n, seed).
ScenarioMatrix simulate(const ForecastedFactorModel& model, std::size_t n, std::uint64_t seed);

std::vector<double> empirical_mean(const ScenarioMatrix& scen);

/// Header of tickers (plus a trailing "market" column when present), one row per scenario.
void write_scenarios_csv(std::ostream& out, const ScenarioMatrix& scen);
ScenarioMatrix read_scenarios_csv(std::istream& in);

namespace ad {

// Differentiable g, g' and g^-1 in (x, u, v). x is any tensor; u and v are
// single-element tensors broadcast over x.
Var gtransform(Var x, Var u, Var v, double scale_a = kDefaultScaleA);
Var gtransform_prime(Var x, Var u, Var v, double scale_a = kDefaultScaleA);
Var gtransform_inverse(Var y, Var u, Var v, double scale_a = kDefaultScaleA);

/// Sum over samples of -log N(Z; 0, 1) + log g'(Z) + log beta, with Z = g^-1((y - alpha)/beta).
/// alpha, beta are S x 1 (or broadcastable); y is S x 1.
Var market_nll(Var alpha, Var beta, Var u, Var v, Var y, double scale_a = kDefaultScaleA);

/// Conditional stock NLL with the realized market factor z_market treated as data.
Var stock_nll(Var alpha, Var beta, Var gamma, Var u_m, Var v_m, Var u, Var v, Var y, Var z_market,
              double scale_a = kDefaultScaleA);

}  // namespace ad

}  // namespace gfagru
