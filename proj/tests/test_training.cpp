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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "support.hpp"
#include "vfit/evalbench.hpp"
#include "vfit/training.hpp"

namespace vfit {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("vfit_train_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ModelConfig micro_config() {
  ModelConfig c = ModelConfig::preset("tiny");
  c.embed_channels = 4;
  c.stage_channels = {4, 4, 8, 8};
  c.stage_blocks = {1, 1, 1, 1};
  c.window = 2;
  c.kernel_taps = 9;
  return c;
}

std::vector<Sample> small_dataset(Index n = 3) {
  SyntheticSpec spec;
  spec.canvas_height = spec.canvas_width = 32;
  spec.sequences = n;
  spec.shapes_per_sequence = 2;
  spec.min_size = 5;
  spec.max_size = 9;
  spec.seed = 17;
  return testing::synthetic_samples(spec);
}

TrainConfig quick_train(Index steps) {
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.max_steps = steps;
  cfg.lr_start = 1e-3;
  cfg.augment.crop_height = cfg.augment.crop_width = 16;
  cfg.seed = 5;
  return cfg;
}

std::vector<std::string> log_columns(const fs::path& log, bool drop_time) {
  std::ifstream is(log);
  std::vector<std::string> rows;
  for (std::string line; std::getline(is, line);) {
    if (drop_time) line = line.substr(0, line.rfind(','));
    rows.push_back(line);
  }
  return rows;
}

TEST(L1, HandCases) {
  const Tensor t({2}, std::vector<double>{0.1, 0.9});
  EXPECT_EQ(l1_loss(t, t), 0.0);
  EXPECT_NEAR(l1_loss(Tensor({2}, std::vector<double>{0.6, 1.4}), t), 0.5, 1e-15);
  EXPECT_NEAR(l1_loss(Tensor({2}, std::vector<double>{0.3, 0.5}), t), 0.3, 1e-15);
  EXPECT_NEAR(l1_loss(Var(Tensor({2}, std::vector<double>{0.3, 0.5})), t).value()[0], 0.3, 1e-15);
  EXPECT_THROW(l1_loss(Tensor({3}), t), ShapeError);
}

TEST(Schedule, EndpointsMidpointAndMonotone) {
  TrainConfig cfg;
  EXPECT_EQ(lr_schedule(0, 1000, cfg), 2e-4);
  EXPECT_EQ(lr_schedule(1000, 1000, cfg), 1e-6);
  const double c = std::cos(std::numbers::pi / 4.0);
  EXPECT_NEAR(lr_schedule(500, 1000, cfg), 1e-6 + (2e-4 - 1e-6) * c * c, 1e-18);
  EXPECT_NEAR(lr_schedule(500, 1000, cfg), 1.005e-4, 1e-15);
  for (Index s = 1; s <= 1000; ++s) EXPECT_LE(lr_schedule(s, 1000, cfg), lr_schedule(s - 1, 1000, cfg));
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg;
  cfg.lr_end = 1e-3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(AdaMaxTest, QuadraticMatchesHandSteppedOracle) {
  // f(p) = 0.5 * a * (p - c)^2, gradient a * (p - c).
  const double a = 3.0, c = 0.7, lr = 0.05, b1 = 0.9, b2 = 0.999;
  ParameterSet params;
  Var p = params.add("p", Tensor({1}, -0.4));
  AdaMax opt(b1, b2);
  double ref = -0.4, m = 0.0, u = 0.0;
  for (int t = 1; t <= 5; ++t) {
    params.zero_grad();
    const Var d = nn::sub(p, Var(Tensor({1}, c)));
    backward(nn::scale(nn::mul(d, d), 0.5 * a));
    opt.step(params, lr);
    const double g = a * (ref - c);
    m = b1 * m + (1.0 - b1) * g;
    u = std::max(b2 * u, std::abs(g));
    ref -= lr / (1.0 - std::pow(b1, t)) * m / u;
    EXPECT_NEAR(p.value()[0], ref, 1e-12) << "step " << t;
  }
  EXPECT_EQ(opt.steps_taken(), 5);
}

TEST(TrainStep, NoDeadSubgraphAfterFirstUpdate) {
  VfitModel model(micro_config(), 3);
  const auto data = small_dataset(2);
  AdaMax opt;
  train_step(model, data, opt, 1e-3);
  model.params().zero_grad();
  accumulate_gradients(model, data);
  std::vector<std::string> dead;
  for (const auto& [name, v] : model.params().entries()) {
    double norm = 0.0;
    for (double g : v.grad().values()) norm += g * g;
    if (!(norm > 0.0)) dead.push_back(name);
  }
  EXPECT_TRUE(dead.empty()) << dead.size() << " dead, first: " << dead.front();
}

TEST(TrainStep, CoarseSynBlocksReachedThroughFusionOnly) {
  VfitModel model(micro_config(), 4);
  model.params().zero_grad();
  accumulate_gradients(model, small_dataset(1), false);
  double coarse = 0.0;
  for (const auto& [name, v] : model.params().entries()) {
    if (name.rfind("synthesis.level2.weight_head", 0) == 0)
      for (double g : v.grad().values()) coarse += std::abs(g);
  }
  EXPECT_GT(coarse, 0.0);
}

TEST(TrainStep, NonFiniteLossAborts) {
  VfitModel model(micro_config(), 5);
  model.params().entries().front().second.mutable_value()[0] = std::nan("");
  EXPECT_THROW(accumulate_gradients(model, small_dataset(1)), NumericError);
}

TEST(TrainStep, DeepSupervisionAddsCoarseTerms) {
  VfitModel model(micro_config(), 6);
  const auto data = small_dataset(1);
  const double plain = accumulate_gradients(model, data, false);
  const double deep = accumulate_gradients(model, data, true);
  EXPECT_GT(deep, plain);
}

TEST(Sampler, BatchesAreDeterministicAndCoverEpoch) {
  const auto data = small_dataset(3);
  TrainConfig cfg = quick_train(10);
  cfg.augmentation = false;
  EXPECT_EQ(total_steps(cfg, 3), 10);
  cfg.max_steps = 0;
  cfg.epochs = 4;
  EXPECT_EQ(total_steps(cfg, 3), 8);
  const auto a = batch_for_step(data, cfg, 1), b = batch_for_step(data, cfg, 1);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, b[i].id);
  std::multiset<std::string> first_epoch;
  for (const auto& s : batch_for_step(data, cfg, 0)) first_epoch.insert(s.id);
  first_epoch.insert(batch_for_step(data, cfg, 1)[0].id);
  EXPECT_EQ(first_epoch, (std::multiset<std::string>{"seq0", "seq1", "seq2"}));
}

TEST(Fit, IdenticalSeedsIdenticalLogs) {
  TempDir tmp;
  const auto data = small_dataset();
  FitOptions o1, o2;
  o1.out_dir = tmp.path() / "a";
  o2.out_dir = tmp.path() / "b";
  VfitModel m1(micro_config(), 9), m2(micro_config(), 9);
  const auto r1 = fit(m1, quick_train(4), data, o1);
  const auto r2 = fit(m2, quick_train(4), data, o2);
  EXPECT_EQ(log_columns(r1.log, true), log_columns(r2.log, true));
  EXPECT_EQ(log_columns(r1.log, false).front(), "step,lr,loss,wall_time");
  EXPECT_EQ(r1.steps, 4);
  EXPECT_EQ(r1.last_loss, r2.last_loss);
}

TEST(Fit, ResumeIsBitExact) {
  TempDir tmp;
  const auto data = small_dataset();
  TrainConfig cfg = quick_train(6);
  cfg.checkpoint_every = 3;
  FitOptions full;
  full.out_dir = tmp.path() / "full";
  VfitModel a(micro_config(), 1);
  fit(a, cfg, data, full);
  ASSERT_TRUE(fs::exists(full.out_dir / "checkpoints" / "step_000003.ckpt"));

  FitOptions resumed;
  resumed.out_dir = tmp.path() / "resumed";
  resumed.resume = full.out_dir / "checkpoints" / "step_000003.ckpt";
  VfitModel b(micro_config(), 99);
  fit(b, cfg, data, resumed);
  const auto la = log_columns(full.out_dir / "train_log.csv", true);
  const auto lb = log_columns(resumed.out_dir / "train_log.csv", true);
  ASSERT_EQ(lb.size(), 4u);  // header plus steps 4..6
  for (std::size_t i = 1; i < lb.size(); ++i) EXPECT_EQ(lb[i], la[i + 3]);
  for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
    EXPECT_EQ(max_abs_diff(a.params().entries()[i].second.value(), b.params().entries()[i].second.value()), 0.0)
        << a.params().entries()[i].first;
  }
}

TEST(Fit, ResumeInSameDirectoryTruncatesLog) {
  TempDir tmp;
  const auto data = small_dataset();
  TrainConfig cfg = quick_train(4);
  cfg.checkpoint_every = 2;
  FitOptions o;
  o.out_dir = tmp.path();
  VfitModel a(micro_config(), 2);
  fit(a, cfg, data, o);
  const auto before = log_columns(tmp.path() / "train_log.csv", true);
  o.resume = tmp.path() / "checkpoints" / "step_000002.ckpt";
  VfitModel b(micro_config(), 2);
  fit(b, cfg, data, o);
  EXPECT_EQ(log_columns(tmp.path() / "train_log.csv", true), before);
}

TEST(Checkpoint, ReloadGivesIdenticalEvaluation) {
  TempDir tmp;
  SyntheticSpec spec;
  spec.canvas_height = spec.canvas_width = 32;
  spec.sequences = 2;
  spec.min_size = 5;
  spec.max_size = 9;
  spec.seed = 3;
  const auto manifest = gen_synthetic(spec, tmp.path() / "data");
  ModelConfig mc = micro_config();
  TrainConfig cfg = quick_train(2);
  FitOptions o;
  o.out_dir = tmp.path() / "run";
  o.model_seed = 8;
  const auto result = fit(mc, cfg, manifest, o);
  const auto reloaded = load_model(result.checkpoint);
  const auto direct = evaluate(*reloaded, manifest);
  const auto via_path = evaluate(result.checkpoint, manifest);
  ASSERT_EQ(direct.samples.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(direct.samples[i].psnr.db, via_path.samples[i].psnr.db);
    EXPECT_EQ(direct.samples[i].ssim, via_path.samples[i].ssim);
  }
}

TEST(Checkpoint, ConfigMismatchAndCorruptionRejected) {
  TempDir tmp;
  VfitModel model(micro_config(), 1);
  AdaMax opt;
  save_training_checkpoint(tmp.path() / "m.ckpt", model, opt, quick_train(1), 0);
  ModelConfig other = micro_config();
  other.embed_channels = 8;
  VfitModel wrong(other, 1);
  EXPECT_THROW(load_training_checkpoint(tmp.path() / "m.ckpt", wrong, nullptr), ConfigError);
  std::ofstream(tmp.path() / "bad.ckpt") << "VFITCKPT garbage";
  EXPECT_THROW(load_archive(tmp.path() / "bad.ckpt"), DataError);
  EXPECT_THROW(load_archive(tmp.path() / "missing.ckpt"), DataError);
}

TEST(Checkpoint, ArchiveRoundTripIsExact) {
  TempDir tmp;
  std::mt19937_64 rng(4);
  TensorArchive ar;
  ar.meta["note"] = "x";
  ar.put("a/b", random_normal({2, 3}, rng));
  ar.put("c", Tensor({1}, 1.0 / 3.0));
  save_archive(tmp.path() / "t.ckpt", ar);
  const auto back = load_archive(tmp.path() / "t.ckpt");
  EXPECT_EQ(back.meta["note"], "x");
  EXPECT_EQ(max_abs_diff(back.at("a/b"), ar.at("a/b")), 0.0);
  EXPECT_EQ(back.at("c")[0], 1.0 / 3.0);
  EXPECT_EQ(back.find("zzz"), nullptr);
  EXPECT_THROW(back.at("zzz"), DataError);
}

TEST(Fit, SingleScaleTrains) {
  TempDir tmp;
  ModelConfig mc = micro_config();
  mc.single_scale = true;
  VfitModel model(mc, 1);
  FitOptions o;
  o.out_dir = tmp.path();
  const auto r = fit(model, quick_train(2), small_dataset(), o);
  EXPECT_EQ(r.steps, 2);
  EXPECT_TRUE(std::isfinite(r.last_loss));
}

}  // namespace
}  // namespace vfit
