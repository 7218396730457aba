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

#ifndef VFIT_NN_HPP_
#define VFIT_NN_HPP_

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "vfit/autograd.hpp"

namespace vfit::nn {

// ---- elementwise / structural ------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var sum(const Var& x);
/// sum(x * w) for a constant w; the usual probe loss in gradient checks.
Var weighted_sum(const Var& x, const Tensor& w);
/// Mean absolute error against a constant target.
Var mean_abs_diff(const Var& pred, const Tensor& target);

Var reshape(const Var& x, Shape shape);

using IndexMap = std::shared_ptr<const std::vector<Index>>;

/// out.flat[i] = x.flat[index[i]]. Repeated source indices are allowed; the
/// backward pass scatter-adds.
Var gather(const Var& x, IndexMap index, Shape out_shape);

/// Concatenation along axis 0; trailing dimensions must agree.
Var concat0(const std::vector<Var>& parts);

// ---- dense layers --------------------------------------------------------------

/// x[N, Cin] * w[Cout, Cin]^T + b[Cout]. `b` may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);

/// Normalises each row of x[N, C] over C, then applies gamma/beta.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Exact (erf-based) GELU.
Var gelu(const Var& x);

Var softmax(const Var& x, std::size_t axis);

// ---- convolutions ------------------------------------------------------------

struct Conv3dGeometry {
  std::array<Index, 3> kernel{3, 3, 3};  // (t, h, w)
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> pad{1, 1, 1};
};

/// x[Cin, T, H, W], w[Cout, Cin, kt, kh, kw], b[Cout] (optional); zero padding.
Var conv3d(const Var& x, const Var& w, const Var& b, const Conv3dGeometry& geom);

/// Transposed convolution. w[Cin, Cout, kt, kh, kw]; output extent
/// (in - 1) * stride - 2 * pad + kernel along each axis.
Var conv_transpose3d(const Var& x, const Var& w, const Var& b, const Conv3dGeometry& geom);

// ---- resampling ----------------------------------------------------------------

/// Bilinear resize of the two trailing axes with half-pixel centres
/// (align_corners = false). Leading axes are batch.
Var resize_bilinear(const Var& x, Index out_h, Index out_w);
Tensor resize_bilinear(const Tensor& x, Index out_h, Index out_w);

/// Sampling stencil of K taps: centred ceil(sqrt(K)) x ceil(sqrt(K)) grid in
/// row-major order. Returns (dx, dy) per tap.
std::vector<std::array<Index, 2>> deformable_base_grid(Index taps);

/// Per-frame deformable aggregation.
///   frames[T, C, H, W], weight/off_x/off_y[K, T, H, W] -> out[T, C, H, W]
///   out[t,c,y,x] = sum_k weight * frames[t,c](x + dx_k + off_x, y + dy_k + off_y)
/// Positions are clamped to the frame border before bilinear interpolation.
Var deform_aggregate(const Var& frames, const Var& weight, const Var& off_x, const Var& off_y);

/// masks[T, H, W], frames[T, C, H, W] -> sum_t masks[t] * frames[t], shape [C, H, W].
Var blend(const Var& masks, const Var& frames);

// ---- attention -----------------------------------------------------------------

inline constexpr double kMaskedScore = -1.0e4;

/// Query-key pairs and stored score entries seen by attention() on this thread.
struct AttentionStats {
  Index calls = 0;
  Index pairs = 0;          // G * N * N per call
  Index score_entries = 0;  // G * heads * N * N per call
};
AttentionStats& attention_stats();
void reset_attention_stats();

/// Multi-head scaled dot-product self-attention over independent groups.
///   qkv[G, N, 3C] packs queries, keys and values (in that order) per token.
///   bias[heads, N, N] (optional Var) and mask[G, N, N] (optional constant) are
///   added to the scores before the softmax. Scale is 1/sqrt(C / heads).
/// Returns [G, N, C]; per-head outputs are concatenated on the channel axis.
Var attention(const Var& qkv, Index heads, const Var& bias, const Tensor* mask);

/// Softmax weights of every attention() call on this thread while `record` is
/// set, one [G, heads, N, N] tensor per call in call order.
struct AttentionProbe {
  bool record = false;
  std::vector<Tensor> weights;
};
AttentionProbe& attention_probe();

}  // namespace vfit::nn

#endif  // VFIT_NN_HPP_
