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

// Kernel-prediction synthesis. At every scale a SynBlock predicts, for each
// input frame, K deformable sampling taps (weights plus horizontal/vertical
// offsets around a centred 5x5 stencil) and a softmax-over-time blending mask;
// the per-frame aggregates are blended into O^l. Scales are fused coarse to
// fine by adding each O^l to the bilinearly upsampled coarser estimate.

#ifndef VFIT_SYNTHESIS_HPP_
#define VFIT_SYNTHESIS_HPP_

#include <random>
#include <string>
#include <vector>

#include "vfit/autograd.hpp"

namespace vfit {

/// Per-pixel kernels for one frame: weight, off_x (alpha), off_y (beta), each [K, H, W].
struct DeformableKernel {
  Tensor weight, off_x, off_y;
};

/// frame[C, H, W] aggregated with one kernel set; total via border clamping.
Tensor deformable_aggregate(const Tensor& frame, const DeformableKernel& kernel);

/// Frames at scales 1, 1/2, 1/4 ...; levels[0] is the input itself. Each level is [T, 3, H_l, W_l].
struct ScalePyramid {
  std::vector<Tensor> levels;
};

/// Bilinear downsampling by 2^l of frames[T, 3, H, W]; H and W must be divisible by 2^(levels-1).
ScalePyramid build_scale_pyramid(const Tensor& frames, Index levels = 3);

struct SynBlockSettings {
  Index feature_channels = 16;
  Index frames = 4;
  Index taps = 25;
  Index hidden = 16;
  /// Start the weight head at a one-hot centre tap (identity sampling).
  bool identity_weights = false;
};

class SynBlock {
 public:
  SynBlock(ParameterSet& params, const std::string& prefix, const SynBlockSettings& settings, std::mt19937_64& rng);

  struct Kernels {
    Var weight, off_x, off_y;  // [K, T, H, W]
  };
  struct Output {
    Var image;      // O^l, [3, H, W]
    Var per_frame;  // O^l_t, [T, 3, H, W]
    Kernels kernels;
    Var masks;      // B^l, [T, H, W]
  };

  /// features[C, T, H, W]: the three heads run on every frame with shared weights.
  Kernels predict_kernels(const Var& features) const;
  /// Softmax-normalised over T at every pixel.
  Var predict_masks(const Var& features) const;
  /// O^l = sum_t B_t * aggregate(I_t, kernels_t); frames[T, 3, H, W] aligned with the features.
  Output forward(const Var& features, const Tensor& frames) const;

  struct Head {
    Var w1, b1, w2, b2;
  };
  Head weight_head, offset_x_head, offset_y_head, mask_head;

 private:
  Var run_head(const Head& head, const Var& x) const;
  SynBlockSettings settings_;
};

/// Coarse-to-fine fusion. outputs[l] is O^l at scale 1/2^l (one or more levels);
/// returns every intermediate estimate, estimates[0] being the final frame.
std::vector<Var> fuse_multiscale(const std::vector<Var>& outputs);
Tensor fuse_multiscale(const std::vector<Tensor>& outputs);

}  // namespace vfit

#endif  // VFIT_SYNTHESIS_HPP_
