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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "vfit/config.hpp"

namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("vfit_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = "env -u VFIT_OUTPUT_ROOT " + std::string(VFIT_CLI_PATH) + " " + args + " >" +
                            (dir_ / "stdout.txt").string() + " 2>" + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string err() const {
    std::ifstream is(dir_ / "stderr.txt");
    return {std::istreambuf_iterator<char>(is), {}};
  }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

const char* kMicroModel =
    " --set model.embed_channels=4 --set model.stage_channels=[4,4,8,8] --set model.stage_blocks=[1,1,1,1]"
    " --set model.window=2 --set model.kernel_taps=9";

TEST_F(CliTest, MalformedConfigExitsTwoWithoutOutputs) {
  std::ofstream(path("bad.json")) << "{ \"model\": { \"window\": ";
  EXPECT_EQ(run("gen-data --config " + path("bad.json") + " --out " + path("out")), 2);
  EXPECT_FALSE(fs::exists(path("out")));
  EXPECT_NE(err().find("error[config]"), std::string::npos);
}

TEST_F(CliTest, UnknownKeyAndBadValueRejected) {
  std::ofstream(path("unknown.json")) << R"({"train": {"learning_rate": 0.1}})";
  EXPECT_EQ(run("gen-data --config " + path("unknown.json") + " --out " + path("o1")), 2);
  EXPECT_NE(err().find("learning_rate"), std::string::npos);
  EXPECT_EQ(run("gen-data --set model.window=1 --out " + path("o2")), 2);
  EXPECT_EQ(run("gen-data --set nosuch.key=3 --out " + path("o3")), 2);
  EXPECT_EQ(run("train --set train.batch=\\\"four\\\" --out " + path("o4")), 2);
  EXPECT_FALSE(fs::exists(path("o1")) || fs::exists(path("o2")) || fs::exists(path("o3")) || fs::exists(path("o4")));
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(CliTest, MissingDataExitsThree) {
  EXPECT_EQ(run("train --manifest " + path("nowhere.txt") + " --out " + path("t")), 3);
  EXPECT_NE(err().find("error[data]"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("t")));
}

TEST_F(CliTest, EndToEndPipeline) {
  const std::string small = " --set synthetic.canvas=32 --set synthetic.sequences=2 --set synthetic.min_size=5"
                            " --set synthetic.max_size=9";
  ASSERT_EQ(run("gen-data" + small + " --out " + path("data")), 0) << err();
  EXPECT_TRUE(fs::exists(path("data/manifest.txt")));
  EXPECT_TRUE(fs::exists(path("data/seq_0001/im7.png")));
  EXPECT_TRUE(fs::exists(path("data/resolved_config.json")));

  ASSERT_EQ(run(std::string("train --manifest ") + path("data/manifest.txt") + kMicroModel +
                " --set train.max_steps=2 --set train.batch=1 --set train.crop=16 --out " + path("run")),
            0)
      << err();
  EXPECT_TRUE(fs::exists(path("run/model.ckpt")));
  EXPECT_TRUE(fs::exists(path("run/train_log.csv")));
  const auto resolved = vfit::read_json_file(path("run/resolved_config.json"));
  EXPECT_EQ(resolved["train"]["max_steps"], 2);
  EXPECT_EQ(resolved["model"]["window"], 2);

  ASSERT_EQ(run("interpolate --checkpoint " + path("run/model.ckpt") + " --frames " + path("data/seq_0000") + " --out " +
                path("interp")),
            0)
      << err();
  EXPECT_TRUE(fs::exists(path("interp/pred_0.5.png")));
  ASSERT_EQ(run("interpolate --checkpoint " + path("run/model.ckpt") + " --frames " + path("data/manifest.txt") +
                " --out " + path("interp_all")),
            0)
      << err();
  EXPECT_TRUE(fs::exists(path("interp_all/seq_0001/pred_0.5.png")));

  ASSERT_EQ(run("eval --checkpoint " + path("run/model.ckpt") + " --manifest " + path("data/manifest.txt") + " --out " +
                path("eval")),
            0)
      << err();
  const auto summary = vfit::read_json_file(path("eval/metrics_summary.json"));
  EXPECT_EQ(summary["mean"]["count"], 2);
  std::ifstream csv(path("eval/metrics.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "sample_id,psnr_db,ssim");

  ASSERT_EQ(run("bench --set bench.channels=8 --out " + path("bench")), 0) << err();
  EXPECT_TRUE(fs::exists(path("bench/bench.csv")));
  EXPECT_TRUE(fs::exists(path("bench/bench.png")));
}

TEST_F(CliTest, RelativeOutputLandsUnderOutputRoot) {
  const std::string cmd = "cd " + dir_.string() + " && VFIT_OUTPUT_ROOT=" + path("root") + " " + VFIT_CLI_PATH +
                          " gen-data --set synthetic.canvas=16 --set synthetic.sequences=1 --set synthetic.min_size=3"
                          " --set synthetic.max_size=5 --set synthetic.max_speed=1 --out rel >/dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(path("root/rel/manifest.txt")));
}

}  // namespace
