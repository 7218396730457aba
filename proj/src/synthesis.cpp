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

#include "vfit/synthesis.hpp"

#include "vfit/init.hpp"
#include "vfit/nn.hpp"

namespace vfit {
namespace {

nn::Conv3dGeometry frame_conv() {
  nn::Conv3dGeometry g;
  g.kernel = {1, 3, 3};
  g.pad = {0, 1, 1};
  return g;
}

SynBlock::Head make_head(ParameterSet& params, const std::string& prefix, Index in, Index hidden, Index out,
                         std::mt19937_64& rng) {
  SynBlock::Head h;
  h.w1 = params.add(prefix + ".conv1.weight", init::conv({hidden, in, 1, 3, 3}, in * 9, rng));
  h.b1 = params.add(prefix + ".conv1.bias", init::zeros({hidden}));
  h.w2 = params.add(prefix + ".conv2.weight", init::conv({out, hidden, 1, 3, 3}, hidden * 9, rng));
  h.b2 = params.add(prefix + ".conv2.bias", init::zeros({out}));
  return h;
}

}  // namespace

Tensor deformable_aggregate(const Tensor& frame, const DeformableKernel& k) {
  if (frame.rank() != 3) throw ShapeError("deformable_aggregate expects a frame [C, H, W]");
  const Index C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  if (k.weight.rank() != 3) throw ShapeError("deformable kernel must be [K, H, W]");
  const Index K = k.weight.dim(0);
  Var frames(frame.reshaped({1, C, H, W}));
  Var w(k.weight.reshaped({K, 1, H, W}));
  Var ax(k.off_x.reshaped({K, 1, H, W}));
  Var ay(k.off_y.reshaped({K, 1, H, W}));
  return nn::deform_aggregate(frames, w, ax, ay).value().reshaped({C, H, W});
}

ScalePyramid build_scale_pyramid(const Tensor& frames, Index levels) {
  if (frames.rank() != 4) throw ShapeError("scale pyramid expects frames [T, C, H, W]");
  const Index H = frames.dim(2), W = frames.dim(3);
  const Index factor = Index{1} << (levels - 1);
  if (H % factor != 0 || W % factor != 0) {
    throw ShapeError("scale pyramid: " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by " +
                     std::to_string(factor));
  }
  ScalePyramid p;
  p.levels.push_back(frames);
  for (Index l = 1; l < levels; ++l) {
    const Index f = Index{1} << l;
    p.levels.push_back(nn::resize_bilinear(frames, H / f, W / f));
  }
  return p;
}

SynBlock::SynBlock(ParameterSet& params, const std::string& prefix, const SynBlockSettings& s, std::mt19937_64& rng)
    : settings_(s) {
  const Index C = s.feature_channels, hid = s.hidden, K = s.taps;
  weight_head = make_head(params, prefix + ".weight_head", C, hid, K, rng);
  offset_x_head = make_head(params, prefix + ".offset_x_head", C, hid, K, rng);
  offset_y_head = make_head(params, prefix + ".offset_y_head", C, hid, K, rng);
  mask_head = make_head(params, prefix + ".mask_head", C * s.frames, hid, s.frames, rng);
  // Offsets start on the base stencil.
  offset_x_head.w2.mutable_value().fill(0.0);
  offset_y_head.w2.mutable_value().fill(0.0);
  if (s.identity_weights) {
    const auto grid = nn::deformable_base_grid(K);
    for (Index k = 0; k < K; ++k) {
      if (grid[static_cast<std::size_t>(k)] == std::array<Index, 2>{0, 0}) weight_head.b2.mutable_value()[k] = 1.0;
    }
  }
}

Var SynBlock::run_head(const Head& head, const Var& x) const {
  Var h = nn::gelu(nn::conv3d(x, head.w1, head.b1, frame_conv()));
  return nn::conv3d(h, head.w2, head.b2, frame_conv());
}

SynBlock::Kernels SynBlock::predict_kernels(const Var& features) const {
  if (features.shape().size() != 4 || features.dim(0) != settings_.feature_channels) {
    throw ShapeError("SynBlock expects features [" + std::to_string(settings_.feature_channels) +
                     ", T, H, W], got " + shape_str(features.shape()));
  }
  return Kernels{run_head(weight_head, features), run_head(offset_x_head, features),
                 run_head(offset_y_head, features)};
}

Var SynBlock::predict_masks(const Var& features) const {
  const Index C = features.dim(0), T = features.dim(1), H = features.dim(2), W = features.dim(3);
  if (T != settings_.frames) throw ShapeError("SynBlock mask head expects " + std::to_string(settings_.frames) + " frames");
  // [C, T, H, W] -> [C * T, 1, H, W]: frame features stacked on channels.
  Var stacked = nn::reshape(features, {C * T, 1, H, W});
  Var logits = nn::reshape(run_head(mask_head, stacked), {T, H, W});
  return nn::softmax(logits, 0);
}

SynBlock::Output SynBlock::forward(const Var& features, const Tensor& frames) const {
  if (frames.rank() != 4 || features.shape().size() != 4 || frames.dim(0) != features.dim(1) ||
      frames.dim(2) != features.dim(2) || frames.dim(3) != features.dim(3)) {
    throw ShapeError("SynBlock: frames " + shape_str(frames.shape()) + " not aligned with features " +
                     shape_str(features.shape()));
  }
  Output out;
  out.kernels = predict_kernels(features);
  out.masks = predict_masks(features);
  out.per_frame = nn::deform_aggregate(Var(frames), out.kernels.weight, out.kernels.off_x, out.kernels.off_y);
  out.image = nn::blend(out.masks, out.per_frame);
  return out;
}

std::vector<Var> fuse_multiscale(const std::vector<Var>& outputs) {
  if (outputs.empty()) throw ShapeError("fuse_multiscale: no scale outputs");
  std::vector<Var> estimates(outputs.size());
  Var current = outputs.back();
  estimates.back() = current;
  for (std::size_t l = outputs.size() - 1; l-- > 0;) {
    const Shape& fine = outputs[l].shape();
    const Shape& coarse = current.shape();
    if (fine.size() != 3 || coarse.size() != 3 || fine[0] != coarse[0] || fine[1] != 2 * coarse[1] ||
        fine[2] != 2 * coarse[2]) {
      throw ShapeError("fuse_multiscale: scale chain mismatch between " + shape_str(fine) + " and " +
                       shape_str(coarse));
    }
    current = nn::add(nn::resize_bilinear(current, fine[1], fine[2]), outputs[l]);
    estimates[l] = current;
  }
  return estimates;
}

Tensor fuse_multiscale(const std::vector<Tensor>& outputs) {
  std::vector<Var> vars;
  for (const Tensor& t : outputs) vars.emplace_back(t);
  return fuse_multiscale(vars).front().value();
}

}  // namespace vfit
