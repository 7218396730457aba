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

#include "vfit/model.hpp"

namespace vfit {
namespace {

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

}  // namespace

VfitModel::VfitModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = std::make_unique<Backbone>(params_, cfg_, rng);
  const std::size_t levels = cfg_.single_scale ? 1 : 3;
  synthesis_.reserve(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    SynBlockSettings s;
    s.feature_channels = backbone_->level_channels(l);
    s.frames = cfg_.frames;
    s.taps = cfg_.kernel_taps;
    s.hidden = cfg_.synthesis_hidden > 0 ? cfg_.synthesis_hidden : s.feature_channels;
    s.identity_weights = l == 0;
    synthesis_.emplace_back(params_, "synthesis.level" + std::to_string(l), s, rng);
  }
}

ModelOutput VfitModel::forward(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("model expects frames [T, 3, H, W], got " + shape_str(frames.shape()));
  }
  const Index H = frames.dim(2), W = frames.dim(3);
  ModelOutput out;
  out.padded_height = round_up(H, kModelMultiple);
  out.padded_width = round_up(W, kModelMultiple);
  const Tensor padded = pad_reflect(frames, out.padded_height - H, out.padded_width - W);

  out.features = backbone_->forward(padded);
  const ScalePyramid pyramid = build_scale_pyramid(padded, static_cast<Index>(synthesis_.size()));
  std::vector<Var> images;
  for (std::size_t l = 0; l < synthesis_.size(); ++l) {
    out.scales.push_back(synthesis_[l].forward(out.features.levels[l], pyramid.levels[l]));
    images.push_back(out.scales.back().image);
  }
  out.estimates = fuse_multiscale(images);
  out.prediction = crop(out.estimates.front(), H, W);
  return out;
}

Tensor VfitModel::interpolate(const Tensor& frames) const { return forward(frames).prediction.value(); }

}  // namespace vfit
