#pragma once

// Market fit, per-stock fit, seed ensembles and model persistence.
//
// Each fit alternates two blocks N_m times:
//   TV-AGRU    full-batch RMSProp on the network weights, tails frozen;
//   FIX-OPTIM  RMSProp on the tail pairs with the network outputs frozen,
//              projected onto [1, 3] after every step.
// Labels and features are standardized with statistics of the fitting rows;
// every reported NLL is in original units.

#include "gfagru/agru.hpp"
#include "gfagru/data.hpp"
#include "gfagru/gen_factor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gfagru {

enum class Ablation { full, naive, no_attention };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& text);

struct TrainConfig {
    double l_fix = 1e-2;
    double l_tv = 1e-3;
    std::size_t outer_iterations = 6;  // N_m
    std::size_t fix_epochs = 2000;     // N_fix
    std::size_t tv_epochs = 2000;      // N_tv
    std::size_t window = 200;          // T
    double validation_fraction = 0.2;
    std::size_t ensemble = 5;          // B_r
    Ablation ablation = Ablation::full;
    std::size_t hidden_market = 4;
    std::size_t hidden_stock = 6;
    std::size_t eval_every = 100;
    std::size_t patience = 5;
    double momentum = 0.2;
    double tail_init = 1.5;
    double scale_a = kDefaultScaleA;
    std::size_t chunk = 256;  // samples per tape when accumulating the full-batch gradient
    std::size_t workers = 1;  // concurrent stock fits

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct Normalization {
    std::vector<double> feature_mean;   // per feature row
    std::vector<double> feature_scale;
    double label_mean = 0.0;
    double label_scale = 1.0;

    Tensor apply(const Tensor& window) const;
    double label(double y) const { return (y - label_mean) / label_scale; }
    nlohmann::json to_json() const;
    static Normalization from_json(const nlohmann::json& j);
};

/// Statistics over the given samples only; zero spread maps to scale 1.
Normalization fit_normalization(std::span<const SamplePair> samples);

struct TrainingLog {
    double initial_validation_nll = 0.0;
    double accepted_validation_nll = 0.0;
    std::vector<double> validation_nll;       // every evaluation, in order
    std::vector<double> fix_train_nll_before;  // one per FIX-OPTIM block
    std::vector<double> fix_train_nll_after;
    std::size_t tv_epochs_run = 0;
    std::size_t fix_epochs_run = 0;
    std::size_t nan_recoveries = 0;
    bool fix_optim_skipped = false;

    nlohmann::json to_json() const;
};

/// Samples in chronological order; the last `validation` of them validate.
struct TrainingSet {
    std::vector<SamplePair> samples;
    std::size_t validation = 0;

    std::span<const SamplePair> fit_part() const;
    std::span<const SamplePair> validation_part() const;
};

struct TrainedMarketModel {
    AgruParams params;
    TailParams tail;
    Normalization norm;
    std::vector<double> z_tilde;  // realized latent market factor per training sample
    TrainingLog log;
    std::uint64_t seed = 0;
};

struct TrainedStockModel {
    std::string ticker;
    AgruParams params;
    TailParams tail_market;
    TailParams tail_residual;
    Normalization norm;
    TrainingLog log;
    std::uint64_t seed = 0;
};

TrainedMarketModel fit_market(const TrainingSet& data, const TrainConfig& cfg, std::uint64_t seed);

/// `z_market` is aligned with data.samples.
TrainedStockModel fit_stock(const std::string& ticker, const TrainingSet& data, std::span<const double> z_market,
                            const TrainConfig& cfg, std::uint64_t seed);

std::vector<MarketTheta> predict_market(const TrainedMarketModel& m, std::span<const Tensor> windows);
std::vector<StockTheta> predict_stock(const TrainedStockModel& m, std::span<const Tensor> windows);

/// Summed NLL in original units.
double market_nll(const TrainedMarketModel& m, std::span<const SamplePair> samples, double scale_a = kDefaultScaleA);
double stock_nll(const TrainedStockModel& m, std::span<const SamplePair> samples, std::span<const double> z_market,
                 double scale_a = kDefaultScaleA);
std::vector<double> realized_market_factor(const TrainedMarketModel& m, std::span<const SamplePair> samples,
                                           double scale_a = kDefaultScaleA);

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct EnsembleMember {
    TrainedMarketModel market;
    std::vector<TrainedStockModel> stocks;
};

struct TrainedEnsemble {
    TrainConfig config;
    std::vector<std::string> tickers;
    std::vector<EnsembleMember> members;
    std::uint64_t seed = 0;
};

/// Seed of ensemble member b for the market network (stream 0) or stock i (stream i + 1).
std::uint64_t member_seed(std::uint64_t seed, std::size_t member, std::size_t stream);

/// B_r market fits, each followed by that member's stock fits.
TrainedEnsemble train_ensemble(const ReturnPanel& panel, const Split& split, const TrainConfig& cfg,
                               std::uint64_t seed);

/// Elementwise mean of the parameter and tail fields.
ForecastedFactorModel average_forecasts(std::span<const ForecastedFactorModel> models);

ForecastedFactorModel member_forecast(const EnsembleMember& member, const Tensor& market_window,
                                      std::span<const Tensor> stock_windows, double scale_a);

/// Average of the member forecasts for one date. Windows are raw (unnormalized).
ForecastedFactorModel ensemble_forecast(const TrainedEnsemble& ens, const Tensor& market_window,
                                        std::span<const Tensor> stock_windows);

/// One forecast per anchor, windows built from the panel.
std::vector<ForecastedFactorModel> ensemble_forecast_panel(const TrainedEnsemble& ens, const ReturnPanel& panel,
                                                           std::span<const std::size_t> anchors);

/// Directory with manifest.json and one snapshot per network. `run` is copied
/// into the manifest verbatim.
void save_ensemble(const TrainedEnsemble& ens, const std::string& dir, const nlohmann::json& run = {});
TrainedEnsemble load_ensemble(const std::string& dir);

}  // namespace gfagru
