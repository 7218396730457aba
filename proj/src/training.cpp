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

#include "vfit/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "vfit/config.hpp"
#include "vfit/nn.hpp"

namespace vfit {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr const char* kLogHeader = "step,lr,loss,wall_time";

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + kGolden * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string format_row(Index step, double lr, double loss, double wall) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.3f", static_cast<long long>(step), lr, loss, wall);
  return buf;
}

/// Keeps the header and rows with step <= `keep`, then reopens for appending.
std::ofstream open_log(const fs::path& path, Index keep) {
  std::vector<std::string> rows;
  if (keep > 0 && fs::exists(path)) {
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) <= keep) rows.push_back(line);
    }
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write training log " + path.string());
  os << kLogHeader << '\n';
  for (const auto& r : rows) os << r << '\n';
  os.flush();
  return os;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_end > 0.0) || !(lr_end <= lr_start)) throw ConfigError("train: require 0 < lr_end <= lr_start");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: betas must lie in [0, 1)");
  }
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (epochs < 1 && max_steps < 1) throw ConfigError("train: need epochs >= 1 or max_steps >= 1");
  if (max_steps < 0 || checkpoint_every < 0) throw ConfigError("train: step counts must be non-negative");
  if (augment.crop_height < 0 || augment.crop_width < 0) throw ConfigError("train.crop must be non-negative");
}

Var l1_loss(const Var& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  return nn::mean_abs_diff(pred, target);
}

double l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  double s = 0.0;
  for (Index i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.numel());
}

double lr_schedule(Index step, Index total, const TrainConfig& cfg) {
  if (total <= 0 || step >= total) return cfg.lr_end;
  if (step <= 0) return cfg.lr_start;
  const double c = std::cos(std::numbers::pi / 2.0 * static_cast<double>(step) / static_cast<double>(total));
  return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * c * c;
}

void AdaMax::step(ParameterSet& params, double lr) {
  ++t_;
  const double correction = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  for (auto& [name, var] : params.entries()) {
    Tensor& p = var.mutable_value();
    auto it = state_.find(name);
    if (it == state_.end()) it = state_.emplace(name, Moments{Tensor(p.shape()), Tensor(p.shape())}).first;
    Tensor& m = it->second.m;
    Tensor& u = it->second.u;
    const bool has = var.has_grad();
    const Tensor* g = has ? &var.node()->grad : nullptr;
    for (Index i = 0; i < p.numel(); ++i) {
      const double gi = has ? (*g)[i] : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      u[i] = std::max(beta2_ * u[i], std::abs(gi));
      if (u[i] > 0.0) p[i] -= lr / correction * m[i] / u[i];
    }
  }
}

void AdaMax::save(TensorArchive& a) const {
  a.meta["adamax"] = {{"t", t_}, {"beta1", beta1_}, {"beta2", beta2_}};
  for (const auto& [name, s] : state_) {
    a.put("adamax/m/" + name, s.m);
    a.put("adamax/u/" + name, s.u);
  }
}

void AdaMax::load(const TensorArchive& a, const ParameterSet& params) {
  if (!a.meta.contains("adamax")) throw DataError("checkpoint holds no optimizer state");
  const auto& meta = a.meta.at("adamax");
  t_ = meta.at("t").get<Index>();
  beta1_ = meta.at("beta1").get<double>();
  beta2_ = meta.at("beta2").get<double>();
  state_.clear();
  for (const auto& [name, var] : params.entries()) {
    const Tensor* m = a.find("adamax/m/" + name);
    const Tensor* u = a.find("adamax/u/" + name);
    if (m == nullptr || u == nullptr) continue;
    if (m->shape() != var.shape() || u->shape() != var.shape()) {
      throw ConfigError("optimizer state for " + name + " does not match the parameter shape");
    }
    state_.emplace(name, Moments{*m, *u});
  }
}

double accumulate_gradients(VfitModel& model, const std::vector<Sample>& batch, bool deep_supervision) {
  if (batch.empty()) throw DataError("empty training batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const Sample& s : batch) {
    ModelOutput out = model.forward(s.inputs);
    Var loss = l1_loss(out.prediction, s.target);
    if (deep_supervision) {
      const Tensor padded = pad_reflect(s.target, out.padded_height - s.target.dim(1),
                                        out.padded_width - s.target.dim(2));
      for (std::size_t l = 1; l < out.estimates.size(); ++l) {
        const Shape& es = out.estimates[l].shape();
        loss = nn::add(loss, l1_loss(out.estimates[l], nn::resize_bilinear(padded, es[1], es[2])));
      }
    }
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      model.params().zero_grad();
      throw NumericError("non-finite training loss on sample " + s.id);
    }
    total += value * inv;
    backward(nn::scale(loss, inv));
  }
  return total;
}

StepResult train_step(VfitModel& model, const std::vector<Sample>& batch, AdaMax& optimizer, double lr,
                      bool deep_supervision) {
  model.params().zero_grad();
  StepResult r;
  r.loss = accumulate_gradients(model, batch, deep_supervision);
  r.lr = lr;
  optimizer.step(model.params(), lr);
  model.params().zero_grad();
  return r;
}

Index total_steps(const TrainConfig& cfg, std::size_t n) {
  if (cfg.max_steps > 0) return cfg.max_steps;
  const Index per_epoch = (static_cast<Index>(n) + cfg.batch - 1) / cfg.batch;
  return cfg.epochs * per_epoch;
}

std::vector<Sample> batch_for_step(const std::vector<Sample>& dataset, const TrainConfig& cfg, Index step) {
  if (dataset.empty()) throw DataError("empty training set");
  const auto n = static_cast<std::uint64_t>(dataset.size());
  std::vector<Sample> batch;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;
  for (Index b = 0; b < cfg.batch; ++b) {
    const auto i = static_cast<std::uint64_t>(step * cfg.batch + b);
    const std::uint64_t epoch = i / n;
    if (epoch != cached_epoch) {
      order = epoch_order(dataset.size(), cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const Sample& s = dataset[order[i % n]];
    batch.push_back(cfg.augmentation ? augment(s, cfg.augment, mix(cfg.seed, i)) : s);
  }
  return batch;
}

void save_training_checkpoint(const fs::path& path, const VfitModel& model, const AdaMax& optimizer,
                              const TrainConfig& cfg, Index step) {
  TensorArchive a;
  a.meta["format"] = "vfit-checkpoint";
  a.meta["model"] = to_json(model.config());
  a.meta["train"] = to_json(cfg);
  a.meta["step"] = step;
  for (const auto& [name, var] : model.params().entries()) a.put(name, var.value());
  optimizer.save(a);
  save_archive(path, a);
}

namespace {

void restore_parameters(const TensorArchive& a, VfitModel& model, const fs::path& path) {
  for (auto& [name, var] : model.params().entries()) {
    const Tensor* t = a.find(name);
    if (t == nullptr) throw ConfigError("checkpoint " + path.string() + " has no parameter " + name);
    if (t->shape() != var.shape()) {
      throw ConfigError("checkpoint/config mismatch for " + name + ": stored " + shape_str(t->shape()) +
                        ", model expects " + shape_str(var.shape()));
    }
    var.mutable_value() = *t;
  }
}

}  // namespace

Index load_training_checkpoint(const fs::path& path, VfitModel& model, AdaMax* optimizer) {
  const TensorArchive a = load_archive(path);
  if (a.meta.value("format", "") != "vfit-checkpoint") throw DataError(path.string() + " is not a model checkpoint");
  restore_parameters(a, model, path);
  if (optimizer != nullptr) optimizer->load(a, model.params());
  return a.meta.value("step", Index{0});
}

std::unique_ptr<VfitModel> load_model(const fs::path& path) {
  const TensorArchive a = load_archive(path);
  if (a.meta.value("format", "") != "vfit-checkpoint") throw DataError(path.string() + " is not a model checkpoint");
  auto model = std::make_unique<VfitModel>(model_config_from_json(a.meta.at("model")), 0);
  restore_parameters(a, *model, path);
  return model;
}

FitResult fit(VfitModel& model, const TrainConfig& cfg, const std::vector<Sample>& dataset, const FitOptions& opt) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training set is empty");
  fs::create_directories(opt.out_dir);
  AdaMax optimizer(cfg.beta1, cfg.beta2);
  Index step = 0;
  if (opt.resume) step = load_training_checkpoint(*opt.resume, model, &optimizer);

  const Index total = total_steps(cfg, dataset.size());
  FitResult result;
  result.log = opt.out_dir / "train_log.csv";
  std::ofstream log = open_log(result.log, step);
  const auto start = std::chrono::steady_clock::now();

  while (step < total) {
    const double lr = lr_schedule(step, total, cfg);
    const StepResult r = train_step(model, batch_for_step(dataset, cfg, step), optimizer, lr, cfg.deep_supervision);
    ++step;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << format_row(step, r.lr, r.loss, wall) << '\n';
    log.flush();
    result.last_loss = r.loss;
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "step_%06lld.ckpt", static_cast<long long>(step));
      save_training_checkpoint(opt.out_dir / "checkpoints" / name, model, optimizer, cfg, step);
    }
    if (opt.on_step && !opt.on_step(step, r)) break;
  }
  result.steps = step;
  result.checkpoint = opt.out_dir / "model.ckpt";
  save_training_checkpoint(result.checkpoint, model, optimizer, cfg, step);
  return result;
}

FitResult fit(const ModelConfig& model_cfg, const TrainConfig& cfg, const DatasetManifest& manifest,
              const FitOptions& opt) {
  std::vector<Sample> dataset;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    dataset.push_back(load_sample(manifest, i));
    validate_sample(dataset.back());
  }
  VfitModel model(model_cfg, opt.model_seed);
  return fit(model, cfg, dataset, opt);
}

}  // namespace vfit
