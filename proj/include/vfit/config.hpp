//  Copyright (c) 2026 The VFIT Authors
//
//  Licensed under the Apache License, Version 2.0 (the "License");
//  you may not use this file except in compliance with the License.
//  You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
//  Unless required by applicable law or agreed to in writing, software
//  distributed under the License is distributed on an "AS IS" BASIS,
//  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//  See the License for the specific language governing permissions and
//  limitations under the License.

// JSON configuration. A run config has the sections "model", "train",
// "data", "synthetic" and "bench"; every section is optional and unknown keys
// are rejected with ConfigError. "model.variant" selects a preset that the
// remaining model keys then override.

#ifndef VFIT_CONFIG_HPP_
#define VFIT_CONFIG_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vfit/evalbench.hpp"
#include "vfit/training.hpp"

namespace vfit {

using Json = nlohmann::json;

/// Input locations; the CLI flags --manifest, --checkpoint, --frames and
/// --resume are shorthands for these keys.
struct DataConfig {
  std::string manifest;       // training manifest
  std::string eval_manifest;  // defaults to the training manifest
  std::string checkpoint;     // eval / interpolate weights
  std::string frames;         // interpolate input: sequence directory, directory of sequences or manifest
  std::string resume;         // train: checkpoint to continue from
};

struct RunConfig {
  ModelConfig model = ModelConfig::preset("tiny");
  TrainConfig train;
  DataConfig data;
  SyntheticSpec synthetic;
  BenchConfig bench;
};

Json to_json(const ModelConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const SyntheticSpec& spec);
Json to_json(const BenchConfig& cfg);
Json to_json(const RunConfig& cfg);

ModelConfig model_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
SyntheticSpec synthetic_spec_from_json(const Json& j);
BenchConfig bench_config_from_json(const Json& j);
RunConfig run_config_from_json(const Json& j);

/// Parses a JSON file; malformed JSON raises ConfigError.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

/// Applies "dotted.key=value". The value is parsed as JSON when possible and
/// taken as a string otherwise.
void apply_override(Json& j, const std::string& assignment);

/// Reads the optional config file, applies overrides in order and validates.
RunConfig resolve_run_config(const std::filesystem::path& config_path, const std::vector<std::string>& overrides);

}  // namespace vfit

#endif  // VFIT_CONFIG_HPP_
