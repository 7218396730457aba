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

#ifndef VFIT_BACKBONE_HPP_
#define VFIT_BACKBONE_HPP_

#include <array>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vfit/attention.hpp"

namespace vfit {

struct ModelConfig {
  std::string variant = "tiny";  // "B", "S" or "tiny"; informational once fields are set
  Index frames = 4;
  Index embed_channels = 16;
  std::array<Index, 4> stage_channels{16, 32, 64, 128};
  std::array<Index, 4> stage_blocks{2, 2, 6, 2};
  Index window = 8;
  BlockKind block_kind = BlockKind::SepSts;
  Index kernel_taps = 25;
  Index patch = 4;
  Index mlp_ratio = 4;
  bool relative_bias = true;
  bool temporal_first = false;
  bool single_scale = false;
  Index synthesis_hidden = 0;  // 0: use the feature width of each level

  /// Presets: "B" (C0 32, [64,128,256,512]), "S" (half of B), "tiny" (C0 16, [16,32,64,128], M 4).
  static ModelConfig preset(const std::string& name);
  void validate() const;
};

/// Hierarchical decoder features F^0 (H), F^1 (H/2), F^2 (H/4), each [C_l, T, H_l, W_l].
struct FeaturePyramid {
  std::array<Var, 3> levels;
};

struct EncoderOutput {
  std::array<Var, 4> stages;  // E^1..E^4 at H/2 .. H/16
  Index blocks_executed = 0;
};

/// Reflect padding of the two trailing axes at the bottom/right edge. Pads
/// longer than the axis keep reflecting back and forth.
Var pad_reflect(const Var& x, Index bottom, Index right);
Tensor pad_reflect(const Tensor& x, Index bottom, Index right);
/// Keeps the top-left height x width region of the two trailing axes.
Var crop(const Var& x, Index height, Index width);
Tensor crop(const Tensor& x, Index height, Index width);

/// Runs one attention/conv block with the stage bookkeeping: the window is
/// capped at min(H, W) (shift disabled when capped) and the input is padded to
/// the block's spatial multiple, then cropped back.
Var run_block(const Block& block, const Var& x, Index window, bool shifted);

class Backbone {
 public:
  Backbone(ParameterSet& params, const ModelConfig& cfg, std::mt19937_64& rng);

  /// frames[T, 3, H, W] -> shallow features [C0, T, H, W].
  Var embed(const Tensor& frames) const;
  /// Four stride-2 stages; requires H and W divisible by 16.
  EncoderOutput encode(const Var& embedding) const;
  FeaturePyramid decode(const Var& embedding, const EncoderOutput& encoded) const;
  FeaturePyramid forward(const Tensor& frames) const;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::unique_ptr<Block>>& stage_blocks(std::size_t stage) const { return blocks_[stage]; }
  /// Channel width of F^level.
  Index level_channels(std::size_t level) const;

 private:
  struct UpStep {
    Var deconv_weight, deconv_bias, fuse_weight, fuse_bias;
  };
  Var up_step(const UpStep& step, const Var& x, const Var& skip) const;

  ModelConfig cfg_;
  Var embed_weight_, embed_bias_;
  std::array<Var, 4> down_weight_, down_bias_;
  std::array<std::vector<std::unique_ptr<Block>>, 4> blocks_;
  std::array<UpStep, 4> up_;  // to H/8, H/4, H/2, H
};

}  // namespace vfit

#endif  // VFIT_BACKBONE_HPP_
