#pragma once

// JSON forms of the factor-model types, shared by manifests and CLI output.

#include "gfagru/gen_factor.hpp"

#include <nlohmann/json.hpp>

namespace gfagru {

nlohmann::json to_json(const TailParams& tail);
nlohmann::json to_json(const ForecastedFactorModel& model);
TailParams tail_from_json(const nlohmann::json& j);
ForecastedFactorModel model_from_json(const nlohmann::json& j);

}  // namespace gfagru
