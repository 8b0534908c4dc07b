#include "vlfau/config.hpp"

#include <fstream>

namespace vlfau {

using json = nlohmann::json;

json to_json(const SynthConfig& c) {
  return {{"au_count", c.au_count},       {"subjects", c.subjects},
          {"samples_per_subject", c.samples_per_subject}, {"image_size", c.image_size},
          {"rates", c.rates},             {"coactivation", c.coactivation},
          {"noise", c.noise},             {"blob_amplitude", c.blob_amplitude}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.au_count = j.value("au_count", c.au_count);
  c.subjects = j.value("subjects", c.subjects);
  c.samples_per_subject = j.value("samples_per_subject", c.samples_per_subject);
  c.image_size = j.value("image_size", c.image_size);
  c.rates = j.value("rates", c.rates);
  c.coactivation = j.value("coactivation", c.coactivation);
  c.noise = j.value("noise", c.noise);
  c.blob_amplitude = j.value("blob_amplitude", c.blob_amplitude);
  return c;
}

json to_json(const RunConfig& c) {
  return {{"synth", to_json(c.synth)}, {"model", to_json(c.model)}, {"train", to_json(c.train)}};
}

RunConfig run_config_from_json(const json& j) {
  try {
    return {synth_config_from_json(j.value("synth", json::object())),
            model_config_from_json(j.value("model", json::object())),
            train_config_from_json(j.value("train", json::object()))};
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key: " + key);
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = value;
}

RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
  json config = to_json(RunConfig{});
  if (!file.empty()) {
    std::ifstream f(file);
    if (!f) throw IoError("cannot read config file " + file);
    const json patch = json::parse(f, nullptr, false);
    if (patch.is_discarded() || !patch.is_object()) throw ConfigError("config file is not a JSON object: " + file);
    for (const auto& [section, values] : patch.items()) {
      if (!config.contains(section) || !values.is_object()) throw ConfigError("unknown config section: " + section);
      for (const auto& [k, v] : values.items()) {
        if (!config[section].contains(k)) throw ConfigError("unknown config key: " + section + "." + k);
        config[section][k] = v;
      }
    }
  }
  for (const auto& o : overrides) apply_override(config, o);
  return run_config_from_json(config);
}

}  // namespace vlfau
