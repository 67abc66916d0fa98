#include "gfagru/trainer.hpp"

#include "gfagru/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace gfagru;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.window = 8;
    c.outer_iterations = 2;
    c.tv_epochs = 40;
    c.fix_epochs = 40;
    c.eval_every = 10;
    c.patience = 3;
    c.ensemble = 1;
    c.hidden_market = 3;
    c.hidden_stock = 3;
    return c;
}

struct Fixture {
    ReturnPanel panel;
    Split split;
    TrainingSet market;
    TrainingSet stock;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture x;
        x.panel = make_panel(synth_generate(SynthSpec::constant(2, 700, {1.5, 2}, {1.5, 1.5}), 3), "MKT");
        SplitSpec ss;
        ss.train_rows = 500;
        x.split = split_rows(x.panel.return_rows(), ss);
        const auto anchors = training_anchors(x.split, 8);
        const auto n_val = validation_count(x.split, anchors);
        x.market = {market_samples(x.panel, anchors, 8, x.split.train_rows), n_val};
        x.stock = {stock_samples(x.panel, 0, anchors, 8, x.split.train_rows), n_val};
        return x;
    }();
    return f;
}

}  // namespace

TEST(TrainConfig, ValidationNamesTheField) {
    TrainConfig c;
    c.l_tv = -1.0;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train.l_tv"), std::string::npos);
    }
    c = TrainConfig{};
    c.tail_init = 4.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_ablation("none"), ConfigError);
    EXPECT_EQ(parse_ablation("no-attention"), Ablation::no_attention);
}

TEST(TrainConfig, JsonRoundTrip) {
    TrainConfig c = small_config();
    c.ablation = Ablation::naive;
    c.l_fix = 0.025;
    const auto back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Normalization, UsesFittingRowsOnly) {
    const auto& f = fixture();
    const auto fit = f.market.fit_part();
    const auto norm = fit_normalization(fit);
    double mean = 0.0;
    for (const auto& s : fit) mean += s.label / static_cast<double>(fit.size());
    EXPECT_NEAR(norm.label_mean, mean, 1e-15);
    EXPECT_EQ(fit.size() + f.market.validation_part().size(), f.market.samples.size());
    EXPECT_GT(f.market.validation, 0u);
    const auto back = Normalization::from_json(norm.to_json());
    EXPECT_EQ(back.feature_scale, norm.feature_scale);
}

TEST(FitMarket, TailsBoundedAndLogConsistent) {
    const auto& f = fixture();
    const auto m = fit_market(f.market, small_config(), 5);
    EXPECT_GE(m.tail.u, kTailMin);
    EXPECT_LE(m.tail.u, kTailMax);
    EXPECT_GE(m.tail.v, kTailMin);
    EXPECT_LE(m.tail.v, kTailMax);
    EXPECT_LE(m.log.accepted_validation_nll, m.log.initial_validation_nll + 1e-9);
    ASSERT_EQ(m.log.fix_train_nll_before.size(), m.log.fix_train_nll_after.size());
    for (std::size_t k = 0; k < m.log.fix_train_nll_after.size(); ++k) {
        EXPECT_LE(m.log.fix_train_nll_after[k], m.log.fix_train_nll_before[k] + 1e-9);
    }
    EXPECT_EQ(m.z_tilde.size(), f.market.samples.size());
    EXPECT_NEAR(market_nll(m, f.market.validation_part()), m.log.accepted_validation_nll, 1e-6);
}

TEST(FitMarket, DeterministicForSeed) {
    const auto& f = fixture();
    const auto a = fit_market(f.market, small_config(), 5);
    const auto b = fit_market(f.market, small_config(), 5);
    EXPECT_EQ(a.tail.u, b.tail.u);
    EXPECT_EQ(a.params.w_o.values()[0], b.params.w_o.values()[0]);
    const auto c = fit_market(f.market, small_config(), 6);
    EXPECT_NE(a.params.w_o.values()[0], c.params.w_o.values()[0]);
}

TEST(FitMarket, NaiveAblationKeepsUnitTails) {
    const auto& f = fixture();
    auto cfg = small_config();
    cfg.ablation = Ablation::naive;
    const auto m = fit_market(f.market, cfg, 5);
    EXPECT_EQ(m.tail.u, 1.0);
    EXPECT_EQ(m.tail.v, 1.0);
    EXPECT_TRUE(m.log.fix_optim_skipped);
    EXPECT_EQ(m.log.fix_epochs_run, 0u);
    const auto s = fit_stock("S01", f.stock, m.z_tilde, cfg, 9);
    EXPECT_EQ(s.tail_market.u, 1.0);
    EXPECT_EQ(s.tail_residual.v, 1.0);
}

TEST(FitMarket, NoAttentionAblation) {
    const auto& f = fixture();
    auto cfg = small_config();
    cfg.ablation = Ablation::no_attention;
    const auto m = fit_market(f.market, cfg, 5);
    EXPECT_FALSE(m.params.attention);
    EXPECT_EQ(m.params.w_a.size(), 0u);
}

TEST(FitStock, PredictionsAreValid) {
    const auto& f = fixture();
    const auto m = fit_market(f.market, small_config(), 5);
    const auto s = fit_stock("S01", f.stock, m.z_tilde, small_config(), 8);
    std::vector<Tensor> windows;
    for (const auto& smp : f.stock.validation_part()) windows.push_back(smp.features);
    for (const auto& th : predict_stock(s, windows)) {
        EXPECT_GT(th.gamma, 0.0);
        EXPECT_TRUE(std::isfinite(th.alpha));
    }
    EXPECT_NEAR(stock_nll(s, f.stock.validation_part(),
                          std::span<const double>(m.z_tilde).subspan(f.stock.fit_part().size())),
                s.log.accepted_validation_nll, 1e-6);
}

TEST(FitStock, RejectsMisalignedFactor) {
    const auto& f = fixture();
    std::vector<double> z(3, 0.0);
    EXPECT_THROW(fit_stock("S01", f.stock, z, small_config(), 1), DataError);
}

TEST(Ensemble, SeedsAreDistinct) {
    EXPECT_NE(member_seed(1, 0, 0), member_seed(1, 1, 0));
    EXPECT_NE(member_seed(1, 0, 0), member_seed(1, 0, 1));
    EXPECT_NE(member_seed(1, 0, 0), member_seed(2, 0, 0));
    EXPECT_EQ(member_seed(1, 3, 4), member_seed(1, 3, 4));
}

TEST(Ensemble, AverageIsElementwise) {
    ForecastedFactorModel a, b;
    a.market = {0.01, 0.02};
    b.market = {0.03, 0.04};
    a.tail_market = {1, 2};
    b.tail_market = {2, 3};
    a.stocks = {{"X", {0.1, 0.2, 0.3}, {1, 1}, {1, 3}}};
    b.stocks = {{"X", {0.3, 0.4, 0.5}, {3, 1}, {3, 1}}};
    const std::vector<ForecastedFactorModel> v{a, b};
    const auto m = average_forecasts(v);
    EXPECT_NEAR(m.market.alpha, 0.02, 1e-15);
    EXPECT_NEAR(m.tail_market.v, 2.5, 1e-15);
    EXPECT_NEAR(m.stocks[0].theta.gamma, 0.4, 1e-15);
    EXPECT_NEAR(m.stocks[0].tail_market.u, 2.0, 1e-15);
    EXPECT_NEAR(m.stocks[0].tail_residual.v, 2.0, 1e-15);
    b.stocks[0].ticker = "Y";
    const std::vector<ForecastedFactorModel> bad{a, b};
    EXPECT_THROW(average_forecasts(bad), std::invalid_argument);
}

TEST(Ensemble, SaveLoadReproducesForecasts) {
    const auto& f = fixture();
    auto cfg = small_config();
    cfg.ensemble = 2;
    cfg.tv_epochs = 20;
    cfg.fix_epochs = 20;
    cfg.outer_iterations = 1;
    const auto ens = train_ensemble(f.panel, f.split, cfg, 11);
    ASSERT_EQ(ens.members.size(), 2u);
    const auto dir = std::filesystem::temp_directory_path() / "gfagru_trainer_test";
    std::filesystem::remove_all(dir);
    save_ensemble(ens, dir.string(), {{"note", "test"}});
    const auto back = load_ensemble(dir.string());
    const auto anchors = rebalance_anchors(f.split);
    const auto a = ensemble_forecast_panel(ens, f.panel, anchors);
    const auto b = ensemble_forecast_panel(back, f.panel, anchors);
    ASSERT_EQ(a.size(), anchors.size());
    for (std::size_t d = 0; d < a.size(); ++d) {
        EXPECT_EQ(a[d].market.alpha, b[d].market.alpha);
        EXPECT_EQ(a[d].stocks[1].theta.gamma, b[d].stocks[1].theta.gamma);
        EXPECT_EQ(a[d].stocks[1].tail_residual.u, b[d].stocks[1].tail_residual.u);
    }
    EXPECT_THROW(load_ensemble((dir / "missing").string()), DataError);
    std::filesystem::remove_all(dir);
}
