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

#ifndef VFIT_MODEL_HPP_
#define VFIT_MODEL_HPP_

#include <cstdint>
#include <memory>
#include <vector>

#include "vfit/backbone.hpp"
#include "vfit/synthesis.hpp"

namespace vfit {

/// Spatial multiple every model input is padded to (four stride-2 stages).
inline constexpr Index kModelMultiple = 16;

struct ModelOutput {
  Var prediction;               // [3, H, W], cropped to the input size
  std::vector<Var> estimates;   // coarse-to-fine chain on the padded grid; estimates[0] is uncropped
  std::vector<SynBlock::Output> scales;
  FeaturePyramid features;
  Index padded_height = 0, padded_width = 0;
};

/// Full interpolation network: embedding, encoder-decoder and one SynBlock per
/// scale (only the finest one when single_scale is set).
class VfitModel {
 public:
  VfitModel(const ModelConfig& cfg, std::uint64_t seed);
  VfitModel(const VfitModel&) = delete;
  VfitModel& operator=(const VfitModel&) = delete;

  /// frames[T, 3, H, W] of any size; inputs are reflect-padded to a multiple
  /// of 16 and the prediction is cropped back.
  ModelOutput forward(const Tensor& frames) const;
  /// Inference-only convenience returning the [3, H, W] middle frame.
  Tensor interpolate(const Tensor& frames) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return *backbone_; }
  const std::vector<SynBlock>& synthesis() const { return synthesis_; }
  Index scale_count() const { return static_cast<Index>(synthesis_.size()); }

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  std::unique_ptr<Backbone> backbone_;
  std::vector<SynBlock> synthesis_;
};

}  // namespace vfit

#endif  // VFIT_MODEL_HPP_
