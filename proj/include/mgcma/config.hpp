#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgcma/data_io.hpp"
#include "mgcma/training.hpp"

namespace mgcma {

/// One experiment record: training settings, pipeline settings and paths.
///
///   {
///     "paper_scale": false,        // start from the 768/12/6 preset
///     "learning_rate": 1e-3, "batch_size": 16, "max_epochs": 100,
///     "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_epsilon": 1e-8,
///     "seed": 0,
///     "pipeline": { see PipelineConfig },
///     "data": "", "out": ""
///   }
struct RunConfig {
  TrainConfig train;
  std::string data;
  std::string out;
};

inline const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{"paper_scale", "learning_rate", "batch_size", "max_epochs",
                                             "adam_beta1",  "adam_beta2",    "adam_epsilon", "seed",
                                             "pipeline",    "data",          "out"};
  return keys;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  const auto& keys = run_config_keys();
  for (const auto& [key, _] : j.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown config key: " + key);
  RunConfig cfg;
  try {
    if (j.value("paper_scale", false)) cfg.train = TrainConfig::paper_scale();
    TrainConfig& t = cfg.train;
    if (j.contains("learning_rate")) t.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("max_epochs")) t.max_epochs = j.at("max_epochs").get<std::size_t>();
    if (j.contains("adam_beta1")) t.beta1 = j.at("adam_beta1").get<double>();
    if (j.contains("adam_beta2")) t.beta2 = j.at("adam_beta2").get<double>();
    if (j.contains("adam_epsilon")) t.epsilon = j.at("adam_epsilon").get<double>();
    if (j.contains("seed")) t.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("pipeline")) t.pipeline = pipeline_config_from_json(j.at("pipeline"), t.pipeline);
    if (j.contains("data")) cfg.data = j.at("data").get<std::string>();
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  cfg.train.validate();
  return cfg;
}

inline RunConfig read_run_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(binary::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline nlohmann::ordered_json to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["learning_rate"] = cfg.train.learning_rate;
  j["batch_size"] = cfg.train.batch_size;
  j["max_epochs"] = cfg.train.max_epochs;
  j["adam_beta1"] = cfg.train.beta1;
  j["adam_beta2"] = cfg.train.beta2;
  j["adam_epsilon"] = cfg.train.epsilon;
  j["seed"] = cfg.train.seed;
  j["pipeline"] = to_json(cfg.train.pipeline);
  j["data"] = cfg.data;
  j["out"] = cfg.out;
  return j;
}

}  // namespace mgcma
