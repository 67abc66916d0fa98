#include "gfagru/json_io.hpp"

namespace gfagru {

using nlohmann::json;

json to_json(const TailParams& tail) { return json{{"u", tail.u}, {"v", tail.v}}; }

json to_json(const ForecastedFactorModel& model) {
    json stocks = json::array();
    for (const auto& s : model.stocks) {
        stocks.push_back({{"ticker", s.ticker},
                          {"alpha", s.theta.alpha},
                          {"beta", s.theta.beta},
                          {"gamma", s.theta.gamma},
                          {"tail_market", to_json(s.tail_market)},
                          {"tail_residual", to_json(s.tail_residual)}});
    }
    return json{{"scale_a", model.scale_a},
                {"market", {{"alpha", model.market.alpha}, {"beta", model.market.beta}}},
                {"tail_market", to_json(model.tail_market)},
                {"stocks", stocks}};
}

TailParams tail_from_json(const json& j) { return TailParams{j.at("u").get<double>(), j.at("v").get<double>()}; }

ForecastedFactorModel model_from_json(const json& j) {
    ForecastedFactorModel m;
    m.scale_a = j.value("scale_a", kDefaultScaleA);
    m.market.alpha = j.at("market").at("alpha").get<double>();
    m.market.beta = j.at("market").at("beta").get<double>();
    m.tail_market = tail_from_json(j.at("tail_market"));
    for (const auto& s : j.at("stocks")) {
        StockModel sm;
        sm.ticker = s.at("ticker").get<std::string>();
        sm.theta = StockTheta{s.at("alpha").get<double>(), s.at("beta").get<double>(), s.at("gamma").get<double>()};
        sm.tail_market = tail_from_json(s.at("tail_market"));
        sm.tail_residual = tail_from_json(s.at("tail_residual"));
        m.stocks.push_back(std::move(sm));
    }
    return m;
}

}  // namespace gfagru
