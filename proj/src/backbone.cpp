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

#include "vfit/backbone.hpp"

#include "vfit/init.hpp"

namespace vfit {
namespace {

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  const Index m = i % period;
  return m < n ? m : period - m;
}

std::vector<Index> pad_index(const Shape& shape, Index bottom, Index right, Shape& out_shape) {
  if (shape.size() < 2) throw ShapeError("pad_reflect needs at least two axes");
  if (bottom < 0 || right < 0) throw ShapeError("pad_reflect: negative padding");
  const Index H = shape[shape.size() - 2], W = shape[shape.size() - 1];
  const Index batch = shape_numel(shape) / (H * W);
  out_shape = shape;
  out_shape[shape.size() - 2] = H + bottom;
  out_shape[shape.size() - 1] = W + right;
  const Index oh = H + bottom, ow = W + right;
  std::vector<Index> idx(static_cast<std::size_t>(batch * oh * ow));
  std::size_t i = 0;
  for (Index b = 0; b < batch; ++b)
    for (Index y = 0; y < oh; ++y)
      for (Index x = 0; x < ow; ++x) idx[i++] = (b * H + reflect_index(y, H)) * W + reflect_index(x, W);
  return idx;
}

std::vector<Index> crop_index(const Shape& shape, Index height, Index width, Shape& out_shape) {
  if (shape.size() < 2) throw ShapeError("crop needs at least two axes");
  const Index H = shape[shape.size() - 2], W = shape[shape.size() - 1];
  if (height > H || width > W || height < 1 || width < 1) {
    throw ShapeError("crop " + std::to_string(height) + "x" + std::to_string(width) + " outside " + shape_str(shape));
  }
  const Index batch = shape_numel(shape) / (H * W);
  out_shape = shape;
  out_shape[shape.size() - 2] = height;
  out_shape[shape.size() - 1] = width;
  std::vector<Index> idx(static_cast<std::size_t>(batch * height * width));
  std::size_t i = 0;
  for (Index b = 0; b < batch; ++b)
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) idx[i++] = (b * H + y) * W + x;
  return idx;
}

Tensor apply_index(const Tensor& x, const std::vector<Index>& idx, Shape shape) {
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = x[idx[i]];
  return out;
}

Index round_up(Index v, Index m) { return (v + m - 1) / m * m; }

}  // namespace

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  c.variant = name;
  if (name == "B") {
    c.embed_channels = 32;
    c.stage_channels = {64, 128, 256, 512};
    c.window = 8;
  } else if (name == "S") {
    c.embed_channels = 16;
    c.stage_channels = {32, 64, 128, 256};
    c.window = 8;
  } else if (name == "tiny") {
    c.embed_channels = 16;
    c.stage_channels = {16, 32, 64, 128};
    c.window = 4;
  } else {
    throw ConfigError("unknown model preset '" + name + "' (expected B, S or tiny)");
  }
  return c;
}

void ModelConfig::validate() const {
  if (frames < 1) throw ConfigError("model.frames must be >= 1");
  if (embed_channels < 1) throw ConfigError("model.embed_channels must be >= 1");
  for (Index c : stage_channels) {
    if (c < 1) throw ConfigError("model.stage_channels entries must be >= 1");
    if (c % heads_for_channels(c) != 0) {
      throw ConfigError("stage width " + std::to_string(c) + " is not divisible by its head count");
    }
  }
  for (Index b : stage_blocks) {
    if (b < 0) throw ConfigError("model.stage_blocks entries must be >= 0");
  }
  if (window < 2) throw ConfigError("model.window must be >= 2");
  if (kernel_taps < 1) throw ConfigError("model.kernel_taps must be >= 1");
  if (patch < 1) throw ConfigError("model.patch must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("model.mlp_ratio must be >= 1");
  if (synthesis_hidden < 0) throw ConfigError("model.synthesis_hidden must be >= 0");
}

Var pad_reflect(const Var& x, Index bottom, Index right) {
  if (bottom == 0 && right == 0) return x;
  Shape out_shape;
  auto idx = pad_index(x.shape(), bottom, right, out_shape);
  return nn::gather(x, std::make_shared<const std::vector<Index>>(std::move(idx)), out_shape);
}

Tensor pad_reflect(const Tensor& x, Index bottom, Index right) {
  Shape out_shape;
  const auto idx = pad_index(x.shape(), bottom, right, out_shape);
  return apply_index(x, idx, out_shape);
}

Var crop(const Var& x, Index height, Index width) {
  const Shape& s = x.shape();
  if (s.size() >= 2 && s[s.size() - 2] == height && s[s.size() - 1] == width) return x;
  Shape out_shape;
  auto idx = crop_index(s, height, width, out_shape);
  return nn::gather(x, std::make_shared<const std::vector<Index>>(std::move(idx)), out_shape);
}

Tensor crop(const Tensor& x, Index height, Index width) {
  Shape out_shape;
  const auto idx = crop_index(x.shape(), height, width, out_shape);
  return apply_index(x, idx, out_shape);
}

Var run_block(const Block& block, const Var& x, Index window, bool shifted) {
  const FeatureShape fs = feature_shape(x.shape());
  if (block.kind() == BlockKind::Conv3d) return block.forward(x, 1, false);
  Index m = window;
  if (std::min(fs.height, fs.width) <= window) {
    m = std::min(fs.height, fs.width);
    shifted = false;
  }
  const Index multiple = block.spatial_multiple(m);
  const Index ph = round_up(fs.height, multiple) - fs.height;
  const Index pw = round_up(fs.width, multiple) - fs.width;
  Var y = block.forward(pad_reflect(x, ph, pw), m, shifted);
  return crop(y, fs.height, fs.width);
}

Backbone::Backbone(ParameterSet& params, const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const Index c0 = cfg.embed_channels;
  const auto& sc = cfg.stage_channels;
  embed_weight_ = params.add("backbone.embed.weight", init::conv({c0, 3, 3, 3, 3}, 3 * 27, rng));
  embed_bias_ = params.add("backbone.embed.bias", init::zeros({c0}));

  BlockSettings bs;
  bs.frames = cfg.frames;
  bs.window = cfg.window;
  bs.patch = cfg.patch;
  bs.mlp_ratio = cfg.mlp_ratio;
  bs.relative_bias = cfg.relative_bias;
  bs.temporal_first = cfg.temporal_first;

  Index prev = c0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string p = "backbone.stage" + std::to_string(s);
    down_weight_[s] = params.add(p + ".down.weight", init::conv({sc[s], prev, 3, 3, 3}, prev * 27, rng));
    down_bias_[s] = params.add(p + ".down.bias", init::zeros({sc[s]}));
    for (Index b = 0; b < cfg.stage_blocks[s]; ++b) {
      blocks_[s].push_back(
          make_block(cfg.block_kind, params, p + ".block" + std::to_string(b), sc[s], bs, rng));
    }
    prev = sc[s];
  }

  // Decoder: H/16 -> H/8 -> H/4 -> H/2 -> H, each fused with its skip.
  const std::array<Index, 4> in{sc[3], sc[2], sc[1], sc[0]};
  const std::array<Index, 4> out{sc[2], sc[1], sc[0], c0};
  for (std::size_t u = 0; u < 4; ++u) {
    const std::string p = "backbone.up" + std::to_string(u);
    up_[u].deconv_weight = params.add(p + ".deconv.weight", init::conv({in[u], out[u], 3, 4, 4}, in[u] * 12, rng));
    up_[u].deconv_bias = params.add(p + ".deconv.bias", init::zeros({out[u]}));
    up_[u].fuse_weight = params.add(p + ".fuse.weight", init::conv({out[u], 2 * out[u], 1, 1, 1}, 2 * out[u], rng));
    up_[u].fuse_bias = params.add(p + ".fuse.bias", init::zeros({out[u]}));
  }
}

Index Backbone::level_channels(std::size_t level) const {
  switch (level) {
    case 0:
      return cfg_.embed_channels;
    case 1:
      return cfg_.stage_channels[0];
    case 2:
      return cfg_.stage_channels[1];
    default:
      throw ShapeError("feature pyramid has levels 0..2");
  }
}

Var Backbone::embed(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ShapeError("embed expects frames [T, 3, H, W], got " + shape_str(frames.shape()));
  }
  if (frames.dim(0) != cfg_.frames) {
    throw ShapeError("embed expects " + std::to_string(cfg_.frames) + " frames, got " + std::to_string(frames.dim(0)));
  }
  Var x(permute(frames, {1, 0, 2, 3}));
  return nn::conv3d(x, embed_weight_, embed_bias_, nn::Conv3dGeometry{});
}

EncoderOutput Backbone::encode(const Var& embedding) const {
  const FeatureShape fs = feature_shape(embedding.shape());
  if (fs.height % 16 != 0) throw ShapeError("encode: height " + std::to_string(fs.height) + " is not divisible by 16");
  if (fs.width % 16 != 0) throw ShapeError("encode: width " + std::to_string(fs.width) + " is not divisible by 16");
  nn::Conv3dGeometry down;
  down.stride = {1, 2, 2};
  EncoderOutput out;
  Var x = embedding;
  for (std::size_t s = 0; s < 4; ++s) {
    x = nn::conv3d(x, down_weight_[s], down_bias_[s], down);
    for (std::size_t b = 0; b < blocks_[s].size(); ++b) {
      x = run_block(*blocks_[s][b], x, cfg_.window, b % 2 == 1);
      ++out.blocks_executed;
    }
    out.stages[s] = x;
  }
  return out;
}

Var Backbone::up_step(const UpStep& step, const Var& x, const Var& skip) const {
  nn::Conv3dGeometry up;
  up.kernel = {3, 4, 4};
  up.stride = {1, 2, 2};
  up.pad = {1, 1, 1};
  Var u = nn::conv_transpose3d(x, step.deconv_weight, step.deconv_bias, up);
  if (u.shape() != skip.shape()) {
    throw ShapeError("decoder skip mismatch: upsampled " + shape_str(u.shape()) + " vs skip " +
                     shape_str(skip.shape()));
  }
  nn::Conv3dGeometry pointwise;
  pointwise.kernel = {1, 1, 1};
  pointwise.pad = {0, 0, 0};
  return nn::gelu(nn::conv3d(nn::concat0({u, skip}), step.fuse_weight, step.fuse_bias, pointwise));
}

FeaturePyramid Backbone::decode(const Var& embedding, const EncoderOutput& enc) const {
  for (const Var& s : enc.stages) {
    if (!s.defined()) throw ShapeError("decode: missing encoder output");
  }
  Var d3 = up_step(up_[0], enc.stages[3], enc.stages[2]);
  Var f2 = up_step(up_[1], d3, enc.stages[1]);
  Var f1 = up_step(up_[2], f2, enc.stages[0]);
  Var f0 = up_step(up_[3], f1, embedding);
  return FeaturePyramid{{f0, f1, f2}};
}

FeaturePyramid Backbone::forward(const Tensor& frames) const {
  Var e = embed(frames);
  return decode(e, encode(e));
}

}  // namespace vfit
