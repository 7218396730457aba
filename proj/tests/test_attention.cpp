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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "support.hpp"
#include "vfit/attention.hpp"

namespace vfit {
namespace {

using testing::check_gradients;
using testing::probe_loss;

struct ProbeScope {
  ProbeScope() {
    nn::attention_probe().record = true;
    nn::attention_probe().weights.clear();
  }
  ~ProbeScope() {
    nn::attention_probe().record = false;
    nn::attention_probe().weights.clear();
  }
};

std::vector<std::pair<std::string, Var>> leaves_of(const ParameterSet& params, const Var& x) {
  std::vector<std::pair<std::string, Var>> out(params.entries().begin(), params.entries().end());
  out.emplace_back("input", x);
  return out;
}

TEST(Msa, SingletonGroupIsProjectedValue) {
  std::mt19937_64 rng(1);
  ParameterSet params;
  MultiHeadAttention msa(params, "m", 4, 2, PartitionKind::Window, 1, 1, false, rng);
  for (auto& [n, v] : params.entries()) v.mutable_value() = random_normal(v.shape(), rng);
  const Tensor x = random_normal({1, 1, 4}, rng);
  const Tensor y = window_msa(Var(x), msa, nullptr, 1).value();
  // v = Wv x + bv, out = Wp v + bp
  const Tensor& w = msa.qkv_weight.value();
  const Tensor& b = msa.qkv_bias.value();
  std::vector<double> v(4);
  for (Index o = 0; o < 4; ++o) {
    v[o] = b[8 + o];
    for (Index c = 0; c < 4; ++c) v[o] += w[(8 + o) * 4 + c] * x[c];
  }
  for (Index o = 0; o < 4; ++o) {
    double want = msa.proj_bias.value()[o];
    for (Index c = 0; c < 4; ++c) want += msa.proj_weight.value()[o * 4 + c] * v[c];
    EXPECT_NEAR(y[o], want, 1e-12);
  }
}

TEST(Msa, ClosedFormSoftmaxQuarterThreeQuarters) {
  // One head, C = 1: q0 = 1, k = (0, ln 3), v = (2, 6).
  Tensor qkv({1, 2, 3});
  qkv.at(0, 0, 0) = 1.0;
  qkv.at(0, 0, 1) = 0.0;
  qkv.at(0, 1, 1) = std::log(3.0);
  qkv.at(0, 0, 2) = 2.0;
  qkv.at(0, 1, 2) = 6.0;
  ProbeScope probe;
  const Tensor out = nn::attention(Var(qkv), 1, Var(), nullptr).value();
  const Tensor& p = nn::attention_probe().weights.at(0);
  EXPECT_NEAR(p.at(0, 0, 0, 0), 0.25, 1e-15);
  EXPECT_NEAR(p.at(0, 0, 0, 1), 0.75, 1e-15);
  EXPECT_NEAR(out.at(0, 0, 0), 0.25 * 2.0 + 0.75 * 6.0, 1e-14);
}

TEST(Msa, IdenticalTokensGiveSingleTokenOutput) {
  std::mt19937_64 rng(2);
  ParameterSet params;
  MultiHeadAttention msa(params, "m", 8, 2, PartitionKind::Window, 2, 1, true, rng);
  for (auto& [n, v] : params.entries()) v.mutable_value() = random_normal(v.shape(), rng);
  const Tensor tok = random_normal({8}, rng);
  Tensor group({1, 4, 8});
  for (Index n = 0; n < 4; ++n)
    for (Index c = 0; c < 8; ++c) group.at(0, n, c) = tok[c];
  Tensor single({1, 1, 8});
  for (Index c = 0; c < 8; ++c) single[c] = tok[c];
  const Tensor a = window_msa(Var(group), msa, nullptr, 2).value();
  ParameterSet p2;
  MultiHeadAttention solo(p2, "s", 8, 2, PartitionKind::Window, 1, 1, false, rng);
  solo.qkv_weight.mutable_value() = msa.qkv_weight.value();
  solo.qkv_bias.mutable_value() = msa.qkv_bias.value();
  solo.proj_weight.mutable_value() = msa.proj_weight.value();
  solo.proj_bias.mutable_value() = msa.proj_bias.value();
  const Tensor b = window_msa(Var(single), solo, nullptr, 1).value();
  for (Index n = 0; n < 4; ++n)
    for (Index c = 0; c < 8; ++c) EXPECT_NEAR(a.at(0, n, c), b[c], 1e-12);
}

TEST(Msa, HeadsMustDivideChannels) {
  Tensor qkv({1, 2, 9});
  EXPECT_THROW(nn::attention(Var(qkv), 2, Var(), nullptr), ConfigError);
}

TEST(Msa, SingleWindowEqualsDenseOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Index C = 8, heads = 2, T = 2, H = 4;
    ParameterSet params;
    MultiHeadAttention msa(params, "m", C, heads, PartitionKind::Window, H, T, false, rng);
    for (auto& [n, v] : params.entries()) v.mutable_value() = random_normal(v.shape(), rng, 0.5);
    const Tensor x = random_normal({C, T, H, H}, rng);
    const TokenGroups g = partition_windows(x, H);
    const Tensor y = window_msa(g, msa, nullptr).data;
    for (Index t = 0; t < T; ++t) {
      Tensor tokens({H * H, C});
      for (Index p = 0; p < H * H; ++p)
        for (Index c = 0; c < C; ++c) tokens.at(p, c) = x.at(c, t, p / H, p % H);
      const Tensor want = testing::dense_attention_oracle(tokens, msa.qkv_weight.value(), msa.qkv_bias.value(),
                                                          msa.proj_weight.value(), msa.proj_bias.value(), heads);
      for (Index p = 0; p < H * H; ++p)
        for (Index c = 0; c < C; ++c) EXPECT_NEAR(y.at(t, p, c), want.at(p, c), 1e-10);
    }
  }
}

TEST(Msa, SoftmaxRowsNormalisedAndMaskedEntriesVanish) {
  std::mt19937_64 rng(6);
  BlockSettings bs;
  bs.frames = 2;
  bs.window = 4;
  ParameterSet params;
  SepStsBlock block(params, "b", 8, bs, rng);
  ProbeScope probe;
  block.forward(Var(random_normal({8, 2, 8, 8}, rng)), 4, true);
  const Tensor& spatial = nn::attention_probe().weights.at(0);
  const auto mask = shift_mask(8, 8, 4, 2, PartitionKind::Window, 2);
  const Index G = spatial.dim(0), heads = spatial.dim(1), N = spatial.dim(2);
  for (Index g = 0; g < G; ++g)
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < N; ++i) {
        double row = 0.0;
        for (Index j = 0; j < N; ++j) {
          const double p = spatial.at(g, h, i, j);
          row += p;
          if (mask.data.at(g % mask.data.dim(0), i, j) != 0.0) {
            EXPECT_LT(p, 1e-8);
          }
        }
        EXPECT_NEAR(row, 1.0, 1e-6);
      }
}

TEST(Blocks, ShapePreserved) {
  std::mt19937_64 rng(7);
  BlockSettings bs;
  bs.frames = 4;
  bs.window = 4;
  bs.patch = 4;
  for (BlockKind kind : {BlockKind::SepSts, BlockKind::Sts, BlockKind::GlobalPatch, BlockKind::Conv3d}) {
    ParameterSet params;
    auto block = make_block(kind, params, "b", 16, bs, rng);
    const Tensor x = random_normal({16, 4, 8, 8}, rng);
    for (bool shifted : {false, true}) {
      EXPECT_EQ(block->forward(Var(x), 4, shifted).shape(), x.shape()) << to_string(kind);
    }
  }
}

TEST(Blocks, GlobalPatchOfOneIsPerPixelAttention) {
  std::mt19937_64 rng(8);
  BlockSettings bs;
  bs.frames = 2;
  bs.patch = 1;
  ParameterSet params;
  GlobalPatchBlock block(params, "g", 4, bs, rng);
  nn::reset_attention_stats();
  block.forward(Var(random_normal({4, 2, 4, 4}, rng)), 4, false);
  EXPECT_EQ(nn::attention_stats().pairs, (2 * 4 * 4) * (2 * 4 * 4));
}

TEST(Blocks, GlobalPatchPairCount) {
  std::mt19937_64 rng(9);
  BlockSettings bs;
  bs.frames = 4;
  bs.patch = 4;
  ParameterSet params;
  GlobalPatchBlock block(params, "g", 8, bs, rng);
  nn::reset_attention_stats();
  block.forward(Var(random_normal({8, 4, 8, 8}, rng)), 8, false);
  EXPECT_EQ(nn::attention_stats().pairs, 256);
}

TEST(Blocks, ZeroSecondConvIsIdentity) {
  std::mt19937_64 rng(10);
  ParameterSet params;
  ConvResBlock3d block(params, "c", 4, rng);
  block.conv2_weight.mutable_value().fill(0.0);
  block.conv2_bias.mutable_value().fill(0.0);
  const Tensor x = random_normal({4, 2, 5, 5}, rng);
  EXPECT_EQ(max_abs_diff(block.forward(Var(x), 1, false).value(), x), 0.0);
}

TEST(Blocks, StsWithOneFrameMatchesSpatialAttention) {
  std::mt19937_64 rng(11);
  BlockSettings bs;
  bs.frames = 1;
  bs.window = 4;
  bs.relative_bias = false;
  ParameterSet ps, pt;
  SepStsBlock sep(ps, "sep", 8, bs, rng);
  StsBlock sts(pt, "sts", 8, bs, rng);
  sts.attn.qkv_weight.mutable_value() = sep.spatial.qkv_weight.value();
  sts.attn.qkv_bias.mutable_value() = sep.spatial.qkv_bias.value();
  const Tensor x = random_normal({8, 1, 8, 8}, rng);
  ProbeScope probe;
  sep.forward(Var(x), 4, false);
  const Tensor spatial = nn::attention_probe().weights.at(0);
  nn::attention_probe().weights.clear();
  sts.forward(Var(x), 4, false);
  const Tensor cube = nn::attention_probe().weights.at(0);
  ASSERT_EQ(spatial.shape(), cube.shape());
  EXPECT_LT(max_abs_diff(spatial, cube), 1e-12);
}

struct GradCase {
  BlockKind kind;
  bool shifted;
};

class BlockGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(BlockGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  BlockSettings bs;
  bs.frames = 2;
  bs.window = 2;
  bs.patch = 2;
  ParameterSet params;
  auto block = make_block(GetParam().kind, params, "b", 4, bs, rng);
  for (auto& [n, v] : params.entries()) {
    Tensor& t = v.mutable_value();
    for (Index i = 0; i < t.numel(); ++i) t[i] += std::normal_distribution<double>(0.0, 0.1)(rng);
  }
  Var x = Var::parameter(random_normal({4, 2, 4, 4}, rng));
  const bool shifted = GetParam().shifted;
  auto loss = probe_loss([&] { return block->forward(x, 2, shifted); }, x.shape());
  const auto r = check_gradients(loss, leaves_of(params, x), 6, 1e-5, 7, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, BlockGradient,
                         ::testing::Values(GradCase{BlockKind::SepSts, false}, GradCase{BlockKind::SepSts, true},
                                           GradCase{BlockKind::Sts, false}, GradCase{BlockKind::Sts, true},
                                           GradCase{BlockKind::GlobalPatch, false},
                                           GradCase{BlockKind::Conv3d, false}));

std::set<Index> influence(const std::vector<const Block*>& blocks, const std::vector<bool>& shifts, Index C, Index T,
                          Index H, Index W, Index M, Index t_out, Index y_out, Index x_out, std::mt19937_64& rng) {
  Var x = Var::parameter(random_normal({C, T, H, W}, rng));
  Var y = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) y = blocks[i]->forward(y, M, shifts[i]);
  Tensor seed(y.shape());
  for (Index c = 0; c < C; ++c) seed.at(c, t_out, y_out, x_out) = 1.0;
  backward(y, seed);
  std::set<Index> pix;
  const Tensor g = x.grad();
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < T; ++t)
      for (Index yy = 0; yy < H; ++yy)
        for (Index xx = 0; xx < W; ++xx) {
          if (g.at(c, t, yy, xx) != 0.0) pix.insert((t * H + yy) * W + xx);
        }
  return pix;
}

TEST(Blocks, SepStsReachesAcrossTimeAndSpace) {
  std::mt19937_64 rng(13);
  BlockSettings bs;
  bs.frames = 4;
  bs.window = 4;
  ParameterSet params;
  SepStsBlock block(params, "b", 8, bs, rng);
  const auto reach = influence({&block}, {false}, 8, 4, 4, 4, 4, 3, 2, 3, rng);
  EXPECT_TRUE(reach.count((0 * 4 + 0) * 4 + 0)) << "(t=0, p=(0,0)) must influence (t=3, q=(2,3))";
}

TEST(Blocks, ShiftedAlternationEnlargesReach) {
  std::mt19937_64 rng(14);
  BlockSettings bs;
  bs.frames = 1;
  bs.window = 4;
  ParameterSet params;
  SepStsBlock a(params, "a", 8, bs, rng), b(params, "b", 8, bs, rng);
  const auto regular = influence({&a, &b}, {false, false}, 8, 1, 8, 8, 4, 0, 3, 3, rng);
  const auto alternating = influence({&a, &b}, {false, true}, 8, 1, 8, 8, 4, 0, 3, 3, rng);
  EXPECT_EQ(regular.size(), 16u);
  EXPECT_GT(alternating.size(), regular.size());
  for (Index p : regular) EXPECT_TRUE(alternating.count(p));
}

TEST(Cost, PaperExample) {
  const auto sts = attention_cost(4, 8, 8, 8, AttentionMode::Sts);
  const auto sep = attention_cost(4, 8, 8, 8, AttentionMode::SepSts);
  EXPECT_EQ(sts.pair_count, 65536);
  EXPECT_EQ(sep.pair_count, 17408);
  EXPECT_NEAR(static_cast<double>(sts.pair_count) / static_cast<double>(sep.pair_count), 3.7647, 1e-4);
  // Interactions per query element: T*M^2 vs T + M^2.
  const Index positions = 4 * 8 * 8;
  EXPECT_EQ(sts.pair_count / positions, 256);
  EXPECT_EQ(sep.pair_count / positions, 68);
}

TEST(Cost, SingleFrameRelation) {
  for (Index M : {2, 4, 8})
    for (Index H : {8, 16}) {
      const auto sts = attention_cost(1, M, H, H, AttentionMode::Sts);
      const auto sep = attention_cost(1, M, H, H, AttentionMode::SepSts);
      EXPECT_EQ(sep.pair_count, sts.pair_count + H * H);
    }
}

TEST(Cost, PerElementInvariant) {
  for (Index T : {1, 2, 4})
    for (Index M : {2, 4})
      for (Index H : {8, 16}) {
        EXPECT_EQ(attention_cost(T, M, H, H, AttentionMode::SepSts).pair_count, T * H * H * (T + M * M));
        EXPECT_EQ(attention_cost(T, M, H, H, AttentionMode::Sts).pair_count, T * H * H * (T * M * M));
      }
}

TEST(Cost, DivisibilityError) { EXPECT_THROW(attention_cost(4, 8, 12, 16, AttentionMode::Sts), ShapeError); }

TEST(Cost, InstrumentedCountsMatchClosedForms) {
  std::mt19937_64 rng(15);
  for (Index T : {1, 2, 3})
    for (Index M : {2, 4})
      for (Index H : {4, 8}) {
        const Index W = 2 * H;
        BlockSettings bs;
        bs.frames = T;
        bs.window = M;
        bs.patch = 2;
        const Tensor x = random_normal({8, T, H, W}, rng);
        const std::pair<BlockKind, AttentionMode> modes[] = {{BlockKind::Sts, AttentionMode::Sts},
                                                             {BlockKind::SepSts, AttentionMode::SepSts},
                                                             {BlockKind::GlobalPatch, AttentionMode::GlobalPatch}};
        for (auto [kind, mode] : modes) {
          ParameterSet params;
          auto block = make_block(kind, params, "b", 8, bs, rng);
          nn::reset_attention_stats();
          block->forward(Var(x), M, false);
          const Index tile = mode == AttentionMode::GlobalPatch ? 2 : M;
          EXPECT_EQ(nn::attention_stats().pairs, attention_cost(T, tile, H, W, mode).pair_count)
              << to_string(mode) << " T=" << T << " M=" << M << " H=" << H;
        }
      }
}

}  // namespace
}  // namespace vfit
