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

#ifndef VFIT_ATTENTION_HPP_
#define VFIT_ATTENTION_HPP_

#include <algorithm>
#include <memory>
#include <random>
#include <string>

#include "vfit/autograd.hpp"
#include "vfit/nn.hpp"
#include "vfit/windowing.hpp"

namespace vfit {

enum class BlockKind { SepSts, Sts, GlobalPatch, Conv3d };

const char* to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& name);

/// Heads per stage: channels / 32, at least one.
Index heads_for_channels(Index channels);

struct BlockSettings {
  Index frames = 4;
  Index window = 8;       // configured M; relative-bias tables are sized for it
  Index patch = 4;        // P for the global-patch block
  Index mlp_ratio = 4;
  bool relative_bias = true;
  bool temporal_first = false;
};

/// Projection weights of one multi-head self-attention layer.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  /// `bias_kind` selects the relative-position table layout; pass relative_bias = false to omit it.
  MultiHeadAttention(ParameterSet& params, const std::string& prefix, Index channels, Index heads,
                     PartitionKind bias_kind, Index table_window, Index frames, bool relative_bias,
                     std::mt19937_64& rng);

  /// tokens[G * N, C] -> [G * N, C]; `effective_window` is the M the groups were cut with.
  Var forward(const Var& tokens, Index groups, Index group_size, Index effective_window, const Tensor* mask) const;

  Index channels() const { return channels_; }
  Index heads() const { return heads_; }

  Var qkv_weight, qkv_bias, proj_weight, proj_bias;
  Var bias_table;  // [rows, heads]; undefined when relative bias is off

 private:
  Index channels_ = 0;
  Index heads_ = 1;
  PartitionKind bias_kind_ = PartitionKind::Window;
  Index table_window_ = 1;
  Index frames_ = 1;
};

/// Multi-head self-attention applied independently to every group.
Var window_msa(const Var& groups, const MultiHeadAttention& msa, const AttentionMask* mask, Index effective_window);
TokenGroups window_msa(const TokenGroups& groups, const MultiHeadAttention& msa, const AttentionMask* mask);

struct LayerNormParams {
  LayerNormParams() = default;
  LayerNormParams(ParameterSet& params, const std::string& prefix, Index channels);
  Var gamma, beta;
};

struct MlpParams {
  MlpParams() = default;
  MlpParams(ParameterSet& params, const std::string& prefix, Index channels, Index hidden, std::mt19937_64& rng);
  Var fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

/// Common interface of the encoder building blocks. Input and output are
/// [C, T, H, W]; attention blocks require H and W divisible by the window
/// (or patch) size, which the caller guarantees by padding.
class Block {
 public:
  virtual ~Block() = default;
  virtual BlockKind kind() const = 0;
  /// `window` is the effective M for this call; `shifted` selects the shifted partition.
  virtual Var forward(const Var& x, Index window, bool shifted) const = 0;
  /// Spatial multiple the input must satisfy for a given effective window.
  virtual Index spatial_multiple(Index window) const = 0;
};

/// Pre-norm residual block: spatial window MSA, temporal MSA, then GELU MLP.
class SepStsBlock final : public Block {
 public:
  SepStsBlock(ParameterSet& params, const std::string& prefix, Index channels, const BlockSettings& settings,
              std::mt19937_64& rng);
  BlockKind kind() const override { return BlockKind::SepSts; }
  Var forward(const Var& x, Index window, bool shifted) const override;
  Index spatial_multiple(Index window) const override { return window; }

  LayerNormParams norm_spatial, norm_temporal, norm_mlp;
  MultiHeadAttention spatial, temporal;
  MlpParams mlp;

 private:
  Var spatial_step(const Var& x, Index window, bool shifted) const;
  Var temporal_step(const Var& x) const;
  bool temporal_first_ = false;
};

/// Joint attention over T x M x M cubes followed by the MLP.
class StsBlock final : public Block {
 public:
  StsBlock(ParameterSet& params, const std::string& prefix, Index channels, const BlockSettings& settings,
           std::mt19937_64& rng);
  BlockKind kind() const override { return BlockKind::Sts; }
  Var forward(const Var& x, Index window, bool shifted) const override;
  Index spatial_multiple(Index window) const override { return window; }

  LayerNormParams norm_attn, norm_mlp;
  MultiHeadAttention attn;
  MlpParams mlp;
};

/// Global attention over non-overlapping P x P x 1 patches folded into tokens
/// of width C * P^2, followed by a per-pixel MLP.
class GlobalPatchBlock final : public Block {
 public:
  GlobalPatchBlock(ParameterSet& params, const std::string& prefix, Index channels, const BlockSettings& settings,
                   std::mt19937_64& rng);
  BlockKind kind() const override { return BlockKind::GlobalPatch; }
  Var forward(const Var& x, Index window, bool shifted) const override;
  Index spatial_multiple(Index) const override { return patch_; }
  Index patch() const { return patch_; }

  LayerNormParams norm_attn, norm_mlp;
  MultiHeadAttention attn;
  MlpParams mlp;

 private:
  Index patch_ = 4;
};

/// Residual pair of 3x3x3 convolutions with a GELU in between.
class ConvResBlock3d final : public Block {
 public:
  ConvResBlock3d(ParameterSet& params, const std::string& prefix, Index channels, std::mt19937_64& rng);
  BlockKind kind() const override { return BlockKind::Conv3d; }
  Var forward(const Var& x, Index window, bool shifted) const override;
  Index spatial_multiple(Index) const override { return 1; }

  Var conv1_weight, conv1_bias, conv2_weight, conv2_bias;
};

std::unique_ptr<Block> make_block(BlockKind kind, ParameterSet& params, const std::string& prefix, Index channels,
                                  const BlockSettings& settings, std::mt19937_64& rng);

// ---- cost model ------------------------------------------------------------

enum class AttentionMode { Sts, SepSts, GlobalPatch };

const char* to_string(AttentionMode mode);

struct CostReport {
  Index pair_count = 0;    // query-key interactions
  Index score_memory = 0;  // stored attention-score entries (pairs x heads)
  AttentionMode mode = AttentionMode::SepSts;
};

/// Exact pair counts of one attention layer of each kind on a T x H x W map.
/// For GlobalPatch, `window` is the patch size P.
CostReport attention_cost(Index frames, Index window, Index height, Index width, AttentionMode mode, Index heads = 1);

}  // namespace vfit

#endif  // VFIT_ATTENTION_HPP_
