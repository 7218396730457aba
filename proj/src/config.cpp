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

#include "vfit/config.hpp"

#include <fstream>
#include <set>

namespace vfit {
namespace {

/// Reads the keys of one section, rejecting anything not consumed.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type: " + j_.at(key).dump());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (seen_.count(key) == 0) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

AttentionMode parse_mode(const std::string& s) {
  if (s == "STS") return AttentionMode::Sts;
  if (s == "SepSTS") return AttentionMode::SepSts;
  if (s == "GlobalPatch") return AttentionMode::GlobalPatch;
  throw ConfigError("unknown attention mode '" + s + "' (expected STS, SepSTS or GlobalPatch)");
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return Json{{"variant", c.variant},
              {"frames", c.frames},
              {"embed_channels", c.embed_channels},
              {"stage_channels", c.stage_channels},
              {"stage_blocks", c.stage_blocks},
              {"window", c.window},
              {"block_kind", to_string(c.block_kind)},
              {"kernel_taps", c.kernel_taps},
              {"patch", c.patch},
              {"mlp_ratio", c.mlp_ratio},
              {"relative_bias", c.relative_bias},
              {"temporal_first", c.temporal_first},
              {"single_scale", c.single_scale},
              {"synthesis_hidden", c.synthesis_hidden}};
}

ModelConfig model_config_from_json(const Json& j) {
  Section s(j, "model");
  std::string variant = "tiny";
  s.read("variant", variant);
  ModelConfig c = ModelConfig::preset(variant);
  s.read("frames", c.frames);
  s.read("embed_channels", c.embed_channels);
  s.read("stage_channels", c.stage_channels);
  s.read("stage_blocks", c.stage_blocks);
  s.read("window", c.window);
  std::string kind = to_string(c.block_kind);
  s.read("block_kind", kind);
  try {
    c.block_kind = parse_block_kind(kind);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  s.read("kernel_taps", c.kernel_taps);
  s.read("patch", c.patch);
  s.read("mlp_ratio", c.mlp_ratio);
  s.read("relative_bias", c.relative_bias);
  s.read("temporal_first", c.temporal_first);
  s.read("single_scale", c.single_scale);
  s.read("synthesis_hidden", c.synthesis_hidden);
  s.finish();
  c.validate();
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"lr_start", c.lr_start},
              {"lr_end", c.lr_end},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"batch", c.batch},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"deep_supervision", c.deep_supervision},
              {"augmentation", c.augmentation},
              {"crop", {c.augment.crop_height, c.augment.crop_width}},
              {"horizontal_flip", c.augment.horizontal_flip},
              {"vertical_flip", c.augment.vertical_flip},
              {"temporal_reverse", c.augment.temporal_reverse}};
}

TrainConfig train_config_from_json(const Json& j) {
  Section s(j, "train");
  TrainConfig c;
  s.read("lr_start", c.lr_start);
  s.read("lr_end", c.lr_end);
  s.read("beta1", c.beta1);
  s.read("beta2", c.beta2);
  s.read("batch", c.batch);
  s.read("epochs", c.epochs);
  s.read("max_steps", c.max_steps);
  s.read("seed", c.seed);
  s.read("checkpoint_every", c.checkpoint_every);
  s.read("deep_supervision", c.deep_supervision);
  s.read("augmentation", c.augmentation);
  if (const Json* crop = s.child("crop")) {
    if (crop->is_number_integer()) {
      c.augment.crop_height = c.augment.crop_width = crop->get<Index>();
    } else if (crop->is_array() && crop->size() == 2 && (*crop)[0].is_number_integer() &&
               (*crop)[1].is_number_integer()) {
      c.augment.crop_height = (*crop)[0].get<Index>();
      c.augment.crop_width = (*crop)[1].get<Index>();
    } else {
      throw ConfigError("config key 'train.crop' must be an integer or [height, width]");
    }
  }
  s.read("horizontal_flip", c.augment.horizontal_flip);
  s.read("vertical_flip", c.augment.vertical_flip);
  s.read("temporal_reverse", c.augment.temporal_reverse);
  s.finish();
  c.validate();
  return c;
}

Json to_json(const SyntheticSpec& spec) {
  Json shapes = Json::array();
  for (const ShapeSpec& s : spec.shapes) {
    shapes.push_back({{"kind", s.kind},
                      {"x", s.x},
                      {"y", s.y},
                      {"size", s.size},
                      {"velocity", {s.vx, s.vy}},
                      {"color", s.color}});
  }
  return Json{{"canvas", {spec.canvas_height, spec.canvas_width}},
              {"sequences", spec.sequences},
              {"shapes_per_sequence", spec.shapes_per_sequence},
              {"max_speed", spec.max_speed},
              {"min_size", spec.min_size},
              {"max_size", spec.max_size},
              {"seed", spec.seed},
              {"shapes", shapes}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j) {
  Section s(j, "synthetic");
  SyntheticSpec spec;
  if (const Json* canvas = s.child("canvas")) {
    if (canvas->is_number_integer()) {
      spec.canvas_height = spec.canvas_width = canvas->get<Index>();
    } else if (canvas->is_array() && canvas->size() == 2) {
      spec.canvas_height = (*canvas)[0].get<Index>();
      spec.canvas_width = (*canvas)[1].get<Index>();
    } else {
      throw ConfigError("config key 'synthetic.canvas' must be an integer or [height, width]");
    }
  }
  s.read("sequences", spec.sequences);
  s.read("shapes_per_sequence", spec.shapes_per_sequence);
  s.read("max_speed", spec.max_speed);
  s.read("min_size", spec.min_size);
  s.read("max_size", spec.max_size);
  s.read("seed", spec.seed);
  if (const Json* shapes = s.child("shapes")) {
    if (!shapes->is_array()) throw ConfigError("config key 'synthetic.shapes' must be an array");
    for (const Json& item : *shapes) {
      Section e(item, "synthetic.shapes[]");
      ShapeSpec sh;
      e.read("kind", sh.kind);
      e.read("x", sh.x);
      e.read("y", sh.y);
      e.read("size", sh.size);
      std::array<double, 2> v{sh.vx, sh.vy};
      e.read("velocity", v);
      sh.vx = v[0];
      sh.vy = v[1];
      e.read("color", sh.color);
      e.finish();
      spec.shapes.push_back(sh);
    }
  }
  s.finish();
  spec.validate();
  return spec;
}

Json to_json(const BenchConfig& c) {
  Json cases = Json::array();
  for (const BenchCase& b : c.cases) cases.push_back({b.frames, b.window, b.height, b.width});
  Json modes = Json::array();
  for (AttentionMode m : c.modes) modes.push_back(to_string(m));
  return Json{{"cases", cases}, {"modes", modes}, {"patch", c.patch}, {"channels", c.channels}, {"seed", c.seed}};
}

BenchConfig bench_config_from_json(const Json& j) {
  Section s(j, "bench");
  BenchConfig c;
  if (const Json* cases = s.child("cases")) {
    c.cases.clear();
    for (const Json& item : *cases) {
      if (!item.is_array() || item.size() != 4) throw ConfigError("bench.cases entries must be [T, M, H, W]");
      c.cases.push_back({item[0].get<Index>(), item[1].get<Index>(), item[2].get<Index>(), item[3].get<Index>()});
    }
  }
  if (const Json* modes = s.child("modes")) {
    c.modes.clear();
    for (const Json& m : *modes) c.modes.push_back(parse_mode(m.get<std::string>()));
  }
  s.read("patch", c.patch);
  s.read("channels", c.channels);
  s.read("seed", c.seed);
  s.finish();
  if (c.patch < 1 || c.channels < 1) throw ConfigError("bench.patch and bench.channels must be >= 1");
  return c;
}

Json to_json(const RunConfig& c) {
  return Json{{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"data",
               {{"manifest", c.data.manifest},
                {"eval_manifest", c.data.eval_manifest},
                {"checkpoint", c.data.checkpoint},
                {"frames", c.data.frames},
                {"resume", c.data.resume}}},
              {"synthetic", to_json(c.synthetic)},
              {"bench", to_json(c.bench)}};
}

RunConfig run_config_from_json(const Json& j) {
  Section s(j, "<root>");
  RunConfig c;
  if (const Json* m = s.child("model")) c.model = model_config_from_json(*m);
  if (const Json* t = s.child("train")) c.train = train_config_from_json(*t);
  if (const Json* d = s.child("data")) {
    Section ds(*d, "data");
    ds.read("manifest", c.data.manifest);
    ds.read("eval_manifest", c.data.eval_manifest);
    ds.read("checkpoint", c.data.checkpoint);
    ds.read("frames", c.data.frames);
    ds.read("resume", c.data.resume);
    ds.finish();
  }
  if (const Json* sy = s.child("synthetic")) c.synthetic = synthetic_spec_from_json(*sy);
  if (const Json* b = s.child("bench")) c.bench = bench_config_from_json(*b);
  s.finish();
  return c;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override key '" + key + "' descends into a non-object");
      *node = Json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig resolve_run_config(const std::filesystem::path& config_path, const std::vector<std::string>& overrides) {
  Json j = config_path.empty() ? Json::object() : read_json_file(config_path);
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const std::string& o : overrides) apply_override(j, o);
  try {
    return run_config_from_json(j);
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace vfit
