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

#ifndef VFIT_TRAINING_HPP_
#define VFIT_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vfit/checkpoint.hpp"
#include "vfit/data.hpp"
#include "vfit/model.hpp"

namespace vfit {

struct TrainConfig {
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  Index batch = 4;
  Index epochs = 100;
  Index max_steps = 0;         // 0: epochs * ceil(dataset / batch)
  std::uint64_t seed = 0;
  Index checkpoint_every = 0;  // 0: final checkpoint only
  bool deep_supervision = false;
  AugmentConfig augment;
  bool augmentation = true;

  void validate() const;
};

/// Mean absolute error over every element.
Var l1_loss(const Var& pred, const Tensor& target);
double l1_loss(const Tensor& pred, const Tensor& target);

/// lr_end + (lr_start - lr_end) * cos^2(pi/2 * step / total); exact at both ends.
double lr_schedule(Index step, Index total_steps, const TrainConfig& cfg);

/// AdaMax with bias-corrected first moment:
///   m <- b1 m + (1 - b1) g;  u <- max(b2 u, |g|);  p <- p - lr / (1 - b1^t) * m / u
/// Entries with u = 0 (never seen a nonzero gradient) are left untouched.
class AdaMax {
 public:
  AdaMax(double beta1 = 0.9, double beta2 = 0.999) : beta1_(beta1), beta2_(beta2) {}

  void step(ParameterSet& params, double lr);
  Index steps_taken() const { return t_; }

  void save(TensorArchive& archive) const;
  void load(const TensorArchive& archive, const ParameterSet& params);

 private:
  struct Moments {
    Tensor m, u;
  };
  double beta1_, beta2_;
  Index t_ = 0;
  std::map<std::string, Moments> state_;
};

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
};

/// Forward, l1 backward (averaged over the batch) and one AdaMax update.
/// Raises NumericError on a non-finite loss before touching the parameters.
StepResult train_step(VfitModel& model, const std::vector<Sample>& batch, AdaMax& optimizer, double lr,
                      bool deep_supervision = false);

/// Loss and gradients for one batch without an optimizer update (gradients stay on the parameters).
double accumulate_gradients(VfitModel& model, const std::vector<Sample>& batch, bool deep_supervision = false);

/// Total optimizer steps for a dataset of `dataset_size` sequences.
Index total_steps(const TrainConfig& cfg, std::size_t dataset_size);

/// Deterministic batch for a step: epoch-shuffled indices and per-sample augmentation.
std::vector<Sample> batch_for_step(const std::vector<Sample>& dataset, const TrainConfig& cfg, Index step);

void save_training_checkpoint(const std::filesystem::path& path, const VfitModel& model, const AdaMax& optimizer,
                              const TrainConfig& cfg, Index step);
/// Restores the model (and optimizer when given); returns the completed step count.
Index load_training_checkpoint(const std::filesystem::path& path, VfitModel& model, AdaMax* optimizer);
/// Builds a model from the configuration stored in a checkpoint and loads its weights.
std::unique_ptr<VfitModel> load_model(const std::filesystem::path& checkpoint);

struct FitOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  std::uint64_t model_seed = 0;
  /// Called after every step; returning false stops training early (no final checkpoint is skipped).
  std::function<bool(Index step, const StepResult&)> on_step;
};

struct FitResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  Index steps = 0;
  double last_loss = 0.0;
};

/// Trains on every sequence of the manifest. Writes train_log.csv
/// (step,lr,loss,wall_time), checkpoints/step_XXXXXX.ckpt per cadence and
/// model.ckpt at the end. Resuming truncates the log to the restored step.
FitResult fit(const ModelConfig& model_cfg, const TrainConfig& cfg, const DatasetManifest& manifest,
              const FitOptions& options);
FitResult fit(VfitModel& model, const TrainConfig& cfg, const std::vector<Sample>& dataset, const FitOptions& options);

}  // namespace vfit

#endif  // VFIT_TRAINING_HPP_
