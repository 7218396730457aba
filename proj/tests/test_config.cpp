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


#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "vfit/config.hpp"

namespace vfit {
namespace {

TEST(Config, DefaultsRoundTrip) {
  const RunConfig cfg;
  const RunConfig back = run_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(back.train.lr_start, 2e-4);
  EXPECT_EQ(back.train.lr_end, 1e-6);
  EXPECT_EQ(back.train.batch, 4);
  EXPECT_EQ(back.train.epochs, 100);
  EXPECT_EQ(back.train.beta1, 0.9);
  EXPECT_EQ(back.train.beta2, 0.999);
  EXPECT_FALSE(back.train.deep_supervision);
}

TEST(Config, VariantPresetThenOverrides) {
  const RunConfig cfg = run_config_from_json(Json::parse(R"({"model": {"variant": "S", "window": 4}})"));
  EXPECT_EQ(cfg.model.stage_channels, (std::array<Index, 4>{32, 64, 128, 256}));
  EXPECT_EQ(cfg.model.window, 4);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"model": {"variant": "Q"}})")), ConfigError);
}

TEST(Config, OverridesParseJsonOrString) {
  Json j = Json::object();
  apply_override(j, "train.lr_start=0.001");
  apply_override(j, "model.block_kind=STS");
  apply_override(j, "model.stage_blocks=[1,1,2,1]");
  apply_override(j, "train.crop=[32,48]");
  const RunConfig cfg = run_config_from_json(j);
  EXPECT_EQ(cfg.train.lr_start, 0.001);
  EXPECT_EQ(cfg.model.block_kind, BlockKind::Sts);
  EXPECT_EQ(cfg.model.stage_blocks, (std::array<Index, 4>{1, 1, 2, 1}));
  EXPECT_EQ(cfg.train.augment.crop_height, 32);
  EXPECT_EQ(cfg.train.augment.crop_width, 48);
  EXPECT_THROW(apply_override(j, "novalue"), ConfigError);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"extra": 1})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"lr": 1}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"batch": "x"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"model": {"block_kind": "MLP"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"train": {"batch": 0}})")), ConfigError);
}

TEST(Config, FileAndOverridesResolve) {
  const auto p = std::filesystem::temp_directory_path() / "vfit_config_test.json";
  std::ofstream(p) << R"({"train": {"batch": 2}, "synthetic": {"canvas": [32, 48], "seed": 4}})";
  const RunConfig cfg = resolve_run_config(p, {"train.batch=3", "data.manifest=m.txt"});
  EXPECT_EQ(cfg.train.batch, 3);
  EXPECT_EQ(cfg.synthetic.canvas_height, 32);
  EXPECT_EQ(cfg.synthetic.canvas_width, 48);
  EXPECT_EQ(cfg.synthetic.seed, 4u);
  EXPECT_EQ(cfg.data.manifest, "m.txt");
  std::ofstream(p) << "{ not json";
  EXPECT_THROW(resolve_run_config(p, {}), ConfigError);
  std::filesystem::remove(p);
  EXPECT_THROW(resolve_run_config(p, {}), ConfigError);
}

}  // namespace
}  // namespace vfit
