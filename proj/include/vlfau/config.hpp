#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vlfau/data_synth.hpp"
#include "vlfau/model.hpp"
#include "vlfau/trainer.hpp"

namespace vlfau {

/// Everything a CLI run can be configured with, grouped as {synth, model, train}.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Sets a dotted key such as "train.lr=0.002". The value is parsed as JSON
/// when possible and kept as a string otherwise. Unknown keys are rejected.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Defaults, then the JSON file (if any), then the overrides in order.
RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides);

}  // namespace vlfau
