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

#include "vfit/attention.hpp"

#include <optional>

#include "vfit/init.hpp"

namespace vfit {
namespace {

nn::IndexMap shared(std::vector<Index> v) { return std::make_shared<const std::vector<Index>>(std::move(v)); }

Var to_tokens(const Var& x, const PartitionLayout& l) {
  return nn::gather(x, shared(group_gather_index(l)), {l.groups * l.tokens, l.shape.channels});
}

Var from_tokens(const Var& y, const PartitionLayout& l) {
  return nn::gather(y, shared(merge_gather_index(l)),
                    {l.shape.channels, l.shape.frames, l.shape.height, l.shape.width});
}

Var mlp_forward(const MlpParams& p, const Var& tokens) {
  Var h = nn::gelu(nn::linear(tokens, p.fc1_weight, p.fc1_bias));
  return nn::linear(h, p.fc2_weight, p.fc2_bias);
}

// x + MLP(LN(x)) on every pixel independently.
Var mlp_step(const Var& x, const LayerNormParams& norm, const MlpParams& mlp) {
  const PartitionLayout l = make_layout(PartitionKind::Temporal, feature_shape(x.shape()), 1);
  Var t = to_tokens(x, l);
  Var y = mlp_forward(mlp, nn::layer_norm(t, norm.gamma, norm.beta));
  return nn::add(x, from_tokens(y, l));
}

// x + MSA(LN(x)) over one partition kind.
Var attention_step(const Var& x, const LayerNormParams& norm, const MultiHeadAttention& msa, PartitionKind kind,
                   Index window, bool shifted) {
  const FeatureShape fs = feature_shape(x.shape());
  const Index shift = (shifted && kind != PartitionKind::Temporal) ? window / 2 : 0;
  const PartitionLayout l = make_layout(kind, fs, window, shift);
  std::optional<AttentionMask> mask;
  if (shift > 0) mask = shift_mask(fs.height, fs.width, window, shift, kind, fs.frames);
  Var t = nn::layer_norm(to_tokens(x, l), norm.gamma, norm.beta);
  Var y = msa.forward(t, l.groups, l.tokens, window, mask ? &mask->data : nullptr);
  return nn::add(x, from_tokens(y, l));
}

}  // namespace

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::SepSts:
      return "SepSTS";
    case BlockKind::Sts:
      return "STS";
    case BlockKind::GlobalPatch:
      return "GlobalPatch";
    case BlockKind::Conv3d:
      return "Conv3D";
  }
  return "?";
}

BlockKind parse_block_kind(const std::string& name) {
  if (name == "SepSTS") return BlockKind::SepSts;
  if (name == "STS") return BlockKind::Sts;
  if (name == "GlobalPatch") return BlockKind::GlobalPatch;
  if (name == "Conv3D") return BlockKind::Conv3d;
  throw ConfigError("unknown block kind '" + name + "' (expected SepSTS, STS, GlobalPatch or Conv3D)");
}

Index heads_for_channels(Index channels) { return std::max<Index>(1, channels / 32); }

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& prefix, Index channels, Index heads,
                                       PartitionKind bias_kind, Index table_window, Index frames,
                                       bool relative_bias, std::mt19937_64& rng)
    : channels_(channels), heads_(heads), bias_kind_(bias_kind), table_window_(table_window), frames_(frames) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("channel count " + std::to_string(channels) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  qkv_weight = params.add(prefix + ".qkv.weight", init::dense({3 * channels, channels}, rng));
  qkv_bias = params.add(prefix + ".qkv.bias", init::zeros({3 * channels}));
  proj_weight = params.add(prefix + ".proj.weight", init::dense({channels, channels}, rng));
  proj_bias = params.add(prefix + ".proj.bias", init::zeros({channels}));
  if (relative_bias) {
    bias_table = params.add(prefix + ".relative_bias",
                            init::dense({relative_table_rows(bias_kind, table_window, frames), heads}, rng));
  }
}

Var MultiHeadAttention::forward(const Var& tokens, Index groups, Index group_size, Index effective_window,
                                const Tensor* mask) const {
  if (tokens.shape() != Shape{groups * group_size, channels_}) {
    throw ShapeError("attention input " + shape_str(tokens.shape()) + " does not match " +
                     std::to_string(groups) + " groups of " + std::to_string(group_size) + " tokens x " +
                     std::to_string(channels_) + " channels");
  }
  Var qkv = nn::reshape(nn::linear(tokens, qkv_weight, qkv_bias), {groups, group_size, 3 * channels_});
  Var bias;
  if (bias_table.defined()) {
    const Index frames = bias_kind_ == PartitionKind::Window ? 1
                         : bias_kind_ == PartitionKind::Temporal
                             ? group_size
                             : group_size / (effective_window * effective_window);
    const auto rel = relative_position_index(bias_kind_, effective_window, frames, table_window_, frames_);
    if (static_cast<Index>(rel.size()) != group_size * group_size) {
      throw ShapeError("relative position index does not match group size " + std::to_string(group_size));
    }
    std::vector<Index> idx(static_cast<std::size_t>(heads_ * group_size * group_size));
    std::size_t i = 0;
    for (Index h = 0; h < heads_; ++h)
      for (Index r : rel) idx[i++] = r * heads_ + h;
    bias = nn::gather(bias_table, shared(std::move(idx)), {heads_, group_size, group_size});
  }
  Var out = nn::attention(qkv, heads_, bias, mask);
  return nn::linear(nn::reshape(out, {groups * group_size, channels_}), proj_weight, proj_bias);
}

Var window_msa(const Var& groups, const MultiHeadAttention& msa, const AttentionMask* mask, Index effective_window) {
  if (groups.shape().size() != 3) throw ShapeError("window_msa expects [G, N, C], got " + shape_str(groups.shape()));
  const Index G = groups.dim(0), N = groups.dim(1), C = groups.dim(2);
  Var y = msa.forward(nn::reshape(groups, {G * N, C}), G, N, effective_window, mask ? &mask->data : nullptr);
  return nn::reshape(y, {G, N, C});
}

TokenGroups window_msa(const TokenGroups& groups, const MultiHeadAttention& msa, const AttentionMask* mask) {
  Var y = window_msa(Var(groups.data), msa, mask, groups.layout.window);
  return {y.value(), groups.layout};
}

LayerNormParams::LayerNormParams(ParameterSet& params, const std::string& prefix, Index channels)
    : gamma(params.add(prefix + ".weight", init::ones({channels}))),
      beta(params.add(prefix + ".bias", init::zeros({channels}))) {}

MlpParams::MlpParams(ParameterSet& params, const std::string& prefix, Index channels, Index hidden,
                     std::mt19937_64& rng)
    : fc1_weight(params.add(prefix + ".fc1.weight", init::dense({hidden, channels}, rng))),
      fc1_bias(params.add(prefix + ".fc1.bias", init::zeros({hidden}))),
      fc2_weight(params.add(prefix + ".fc2.weight", init::dense({channels, hidden}, rng))),
      fc2_bias(params.add(prefix + ".fc2.bias", init::zeros({channels}))) {}

// ---- Sep-STS -------------------------------------------------------------------

SepStsBlock::SepStsBlock(ParameterSet& params, const std::string& prefix, Index channels,
                         const BlockSettings& s, std::mt19937_64& rng)
    : norm_spatial(params, prefix + ".norm_spatial", channels),
      norm_temporal(params, prefix + ".norm_temporal", channels),
      norm_mlp(params, prefix + ".norm_mlp", channels),
      spatial(params, prefix + ".spatial_attn", channels, heads_for_channels(channels), PartitionKind::Window,
              s.window, s.frames, s.relative_bias, rng),
      temporal(params, prefix + ".temporal_attn", channels, heads_for_channels(channels), PartitionKind::Temporal,
               s.window, s.frames, s.relative_bias, rng),
      mlp(params, prefix + ".mlp", channels, s.mlp_ratio * channels, rng),
      temporal_first_(s.temporal_first) {}

Var SepStsBlock::spatial_step(const Var& x, Index window, bool shifted) const {
  return attention_step(x, norm_spatial, spatial, PartitionKind::Window, window, shifted);
}

Var SepStsBlock::temporal_step(const Var& x) const {
  return attention_step(x, norm_temporal, temporal, PartitionKind::Temporal, 1, false);
}

Var SepStsBlock::forward(const Var& x, Index window, bool shifted) const {
  Var y = temporal_first_ ? spatial_step(temporal_step(x), window, shifted)
                          : temporal_step(spatial_step(x, window, shifted));
  return mlp_step(y, norm_mlp, mlp);
}

// ---- STS -----------------------------------------------------------------------

StsBlock::StsBlock(ParameterSet& params, const std::string& prefix, Index channels, const BlockSettings& s,
                   std::mt19937_64& rng)
    : norm_attn(params, prefix + ".norm_attn", channels),
      norm_mlp(params, prefix + ".norm_mlp", channels),
      attn(params, prefix + ".attn", channels, heads_for_channels(channels), PartitionKind::Cube, s.window, s.frames,
           s.relative_bias, rng),
      mlp(params, prefix + ".mlp", channels, s.mlp_ratio * channels, rng) {}

Var StsBlock::forward(const Var& x, Index window, bool shifted) const {
  Var y = attention_step(x, norm_attn, attn, PartitionKind::Cube, window, shifted);
  return mlp_step(y, norm_mlp, mlp);
}

// ---- global patch attention ----------------------------------------------------

GlobalPatchBlock::GlobalPatchBlock(ParameterSet& params, const std::string& prefix, Index channels,
                                   const BlockSettings& s, std::mt19937_64& rng)
    : norm_attn(params, prefix + ".norm_attn", channels * s.patch * s.patch),
      norm_mlp(params, prefix + ".norm_mlp", channels),
      attn(params, prefix + ".attn", channels * s.patch * s.patch, heads_for_channels(channels),
           PartitionKind::Window, 1, s.frames, false, rng),
      mlp(params, prefix + ".mlp", channels, s.mlp_ratio * channels, rng),
      patch_(s.patch) {
  if (s.patch < 1) throw ConfigError("patch size must be positive");
}

Var GlobalPatchBlock::forward(const Var& x, Index, bool) const {
  const FeatureShape fs = feature_shape(x.shape());
  const Index P = patch_;
  if (fs.height % P != 0 || fs.width % P != 0) {
    throw ShapeError("global patch block: " + std::to_string(fs.height) + "x" + std::to_string(fs.width) +
                     " is not divisible by patch " + std::to_string(P));
  }
  const Index ph = fs.height / P, pw = fs.width / P;
  const Index tokens = fs.frames * ph * pw;
  const Index width = fs.channels * P * P;
  const Index positions = fs.positions();
  std::vector<Index> fold(static_cast<std::size_t>(tokens * width));
  std::vector<Index> unfold(static_cast<std::size_t>(x.value().numel()));
  std::size_t i = 0;
  for (Index t = 0; t < fs.frames; ++t)
    for (Index py = 0; py < ph; ++py)
      for (Index px = 0; px < pw; ++px)
        for (Index c = 0; c < fs.channels; ++c)
          for (Index dy = 0; dy < P; ++dy)
            for (Index dx = 0; dx < P; ++dx, ++i) {
              const Index src = c * positions + (t * fs.height + py * P + dy) * fs.width + px * P + dx;
              fold[i] = src;
              unfold[static_cast<std::size_t>(src)] = static_cast<Index>(i);
            }
  Var t = nn::gather(x, shared(std::move(fold)), {tokens, width});
  Var y = attn.forward(nn::layer_norm(t, norm_attn.gamma, norm_attn.beta), 1, tokens, 1, nullptr);
  Var back = nn::gather(y, shared(std::move(unfold)), x.shape());
  return mlp_step(nn::add(x, back), norm_mlp, mlp);
}

// ---- 3D convolutional residual block -------------------------------------------

ConvResBlock3d::ConvResBlock3d(ParameterSet& params, const std::string& prefix, Index channels,
                               std::mt19937_64& rng)
    : conv1_weight(params.add(prefix + ".conv1.weight",
                              init::conv({channels, channels, 3, 3, 3}, channels * 27, rng))),
      conv1_bias(params.add(prefix + ".conv1.bias", init::zeros({channels}))),
      conv2_weight(params.add(prefix + ".conv2.weight",
                              init::conv({channels, channels, 3, 3, 3}, channels * 27, rng))),
      conv2_bias(params.add(prefix + ".conv2.bias", init::zeros({channels}))) {}

Var ConvResBlock3d::forward(const Var& x, Index, bool) const {
  const nn::Conv3dGeometry g;  // 3x3x3, stride 1, pad 1
  Var h = nn::gelu(nn::conv3d(x, conv1_weight, conv1_bias, g));
  return nn::add(x, nn::conv3d(h, conv2_weight, conv2_bias, g));
}

std::unique_ptr<Block> make_block(BlockKind kind, ParameterSet& params, const std::string& prefix, Index channels,
                                  const BlockSettings& settings, std::mt19937_64& rng) {
  switch (kind) {
    case BlockKind::SepSts:
      return std::make_unique<SepStsBlock>(params, prefix, channels, settings, rng);
    case BlockKind::Sts:
      return std::make_unique<StsBlock>(params, prefix, channels, settings, rng);
    case BlockKind::GlobalPatch:
      return std::make_unique<GlobalPatchBlock>(params, prefix, channels, settings, rng);
    case BlockKind::Conv3d:
      return std::make_unique<ConvResBlock3d>(params, prefix, channels, rng);
  }
  throw ConfigError("unhandled block kind");
}

// ---- cost model ------------------------------------------------------------

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::Sts:
      return "STS";
    case AttentionMode::SepSts:
      return "SepSTS";
    case AttentionMode::GlobalPatch:
      return "GlobalPatch";
  }
  return "?";
}

CostReport attention_cost(Index T, Index M, Index H, Index W, AttentionMode mode, Index heads) {
  if (T < 1 || M < 1 || H < 1 || W < 1 || heads < 1) throw ShapeError("attention_cost: extents must be positive");
  if (H % M != 0) throw ShapeError("attention_cost: height " + std::to_string(H) + " not divisible by " + std::to_string(M));
  if (W % M != 0) throw ShapeError("attention_cost: width " + std::to_string(W) + " not divisible by " + std::to_string(M));
  CostReport r;
  r.mode = mode;
  const Index tiles = (H / M) * (W / M);
  switch (mode) {
    case AttentionMode::Sts:
      r.pair_count = tiles * (T * M * M) * (T * M * M);
      break;
    case AttentionMode::SepSts:
      r.pair_count = T * tiles * (M * M) * (M * M) + H * W * T * T;
      break;
    case AttentionMode::GlobalPatch: {
      const Index tokens = T * tiles;
      r.pair_count = tokens * tokens;
      break;
    }
  }
  r.score_memory = r.pair_count * heads;
  return r;
}

}  // namespace vfit
