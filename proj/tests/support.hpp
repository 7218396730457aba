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

// Independent reference implementations and the finite-difference harness
// shared by the unit tests and the acceptance runner. Nothing here calls the
// library routine it is meant to check.

#ifndef VFIT_TESTS_SUPPORT_HPP_
#define VFIT_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vfit/autograd.hpp"
#include "vfit/data.hpp"
#include "vfit/nn.hpp"

namespace vfit::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  Index checked = 0;
};

/// Central finite differences of a scalar loss against the analytic gradient.
/// For every leaf: up to `entries_per_leaf` individual coordinates plus one
/// random direction covering the whole tensor. Errors are relative with a
/// small absolute floor so that vanishing gradients compare as equal.
inline GradCheck check_gradients(const std::function<Var()>& loss_fn, std::vector<std::pair<std::string, Var>> leaves,
                                 Index entries_per_leaf = 6, double eps = 1e-5, std::uint64_t seed = 7,
                                 double floor = 1e-7) {
  for (auto& [name, v] : leaves) {
    v.zero_grad();
  }
  const Var loss = loss_fn();
  backward(loss);
  std::vector<Tensor> grads;
  for (auto& [name, v] : leaves) grads.push_back(v.grad());

  std::mt19937_64 rng(seed);
  GradCheck out;
  auto eval = [&]() { return loss_fn().value()[0]; };
  auto record = [&](double analytic, double numeric, const std::string& what) {
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    ++out.checked;
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = what + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
    }
  };
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& value = leaves[li].second.mutable_value();
    const Tensor& g = grads[li];
    const Index n = value.numel();
    std::vector<Index> picks;
    if (n <= entries_per_leaf) {
      for (Index i = 0; i < n; ++i) picks.push_back(i);
    } else {
      std::uniform_int_distribution<Index> pick(0, n - 1);
      for (Index k = 0; k < entries_per_leaf; ++k) picks.push_back(pick(rng));
    }
    for (Index i : picks) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double up = eval();
      value[i] = orig - eps;
      const double down = eval();
      value[i] = orig;
      record(g[i], (up - down) / (2.0 * eps), leaves[li].first + "[" + std::to_string(i) + "]");
    }
    Tensor dir = random_normal(value.shape(), rng);
    double analytic = 0.0;
    for (Index i = 0; i < n; ++i) analytic += g[i] * dir[i];
    const Tensor orig = value;
    for (Index i = 0; i < n; ++i) value[i] = orig[i] + eps * dir[i];
    const double up = eval();
    for (Index i = 0; i < n; ++i) value[i] = orig[i] - eps * dir[i];
    const double down = eval();
    value = orig;
    record(analytic, (up - down) / (2.0 * eps), leaves[li].first + "[direction]");
  }
  return out;
}

/// Scalar probe loss sum(w * f(x)) with fixed random weights.
inline std::function<Var()> probe_loss(std::function<Var()> f, const Shape& out_shape, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  Tensor w = random_normal(out_shape, rng);
  return [f = std::move(f), w]() { return nn::weighted_sum(f(), w); };
}

/// Plain scaled dot-product attention of one token set, tokens[N, C], with
/// packed projection weights laid out as [q | k | v] rows of qkv_w[3C, C].
inline Tensor dense_attention_oracle(const Tensor& tokens, const Tensor& qkv_w, const Tensor& qkv_b,
                                     const Tensor& proj_w, const Tensor& proj_b, Index heads) {
  const Index N = tokens.dim(0), C = tokens.dim(1), d = C / heads;
  std::vector<double> q(N * C), k(N * C), v(N * C);
  for (Index i = 0; i < N; ++i)
    for (Index o = 0; o < 3 * C; ++o) {
      double s = qkv_b[o];
      for (Index c = 0; c < C; ++c) s += qkv_w[o * C + c] * tokens[i * C + c];
      (o < C ? q : o < 2 * C ? k : v)[i * C + o % C] = s;
    }
  std::vector<double> mixed(N * C, 0.0);
  for (Index h = 0; h < heads; ++h)
    for (Index i = 0; i < N; ++i) {
      std::vector<double> score(N);
      double mx = -1e300;
      for (Index j = 0; j < N; ++j) {
        double s = 0.0;
        for (Index c = h * d; c < (h + 1) * d; ++c) s += q[i * C + c] * k[j * C + c];
        score[j] = s / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, score[j]);
      }
      double z = 0.0;
      for (double& s : score) z += (s = std::exp(s - mx));
      for (Index j = 0; j < N; ++j)
        for (Index c = h * d; c < (h + 1) * d; ++c) mixed[i * C + c] += score[j] / z * v[j * C + c];
    }
  Tensor out({N, C});
  for (Index i = 0; i < N; ++i)
    for (Index o = 0; o < C; ++o) {
      double s = proj_b[o];
      for (Index c = 0; c < C; ++c) s += proj_w[o * C + c] * mixed[i * C + c];
      out[i * C + o] = s;
    }
  return out;
}

/// Clamp-to-edge bilinear read of plane [H, W] at real coordinates (x, y).
inline double bilinear_read(const Tensor& img, Index c, double x, double y) {
  const Index H = img.dim(1), W = img.dim(2);
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  const Index x0 = static_cast<Index>(std::floor(x)), y0 = static_cast<Index>(std::floor(y));
  const Index x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double ax = x - x0, ay = y - y0;
  auto at = [&](Index yy, Index xx) { return img[(c * H + yy) * W + xx]; };
  return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) + ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
}

/// Per-pixel, per-tap, per-channel loop over frame[C, H, W] with kernels
/// weight/off_x/off_y [K, H, W] on the centred ceil(sqrt K) stencil.
inline Tensor deformable_oracle(const Tensor& frame, const Tensor& weight, const Tensor& off_x, const Tensor& off_y) {
  const Index C = frame.dim(0), H = frame.dim(1), W = frame.dim(2), K = weight.dim(0);
  const auto side = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(K))));
  Tensor out({C, H, W});
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index k = 0; k < K; ++k) {
        const Index bx = k % side - (side - 1) / 2, by = k / side - (side - 1) / 2;
        const Index at = (k * H + y) * W + x;
        for (Index c = 0; c < C; ++c) {
          out[(c * H + y) * W + x] +=
              weight[at] * bilinear_read(frame, c, static_cast<double>(x + bx) + off_x[at], static_cast<double>(y + by) + off_y[at]);
        }
      }
  return out;
}

/// SSIM written directly from the definition: one 11x11 Gaussian window per
/// output pixel, luma 0.299/0.587/0.114, valid region only.
inline double ssim_oracle(const Tensor& a, const Tensor& b) {
  const Index H = a.dim(1), W = a.dim(2);
  auto luma = [&](const Tensor& t, Index y, Index x) {
    if (t.dim(0) == 1) return t[y * W + x];
    return 0.299 * t[y * W + x] + 0.587 * t[(H + y) * W + x] + 0.114 * t[(2 * H + y) * W + x];
  };
  double w[11][11], total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) total += (w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5)));
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  for (Index y = 0; y + 11 <= H; ++y)
    for (Index x = 0; x + 11 <= W; ++x) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double ww = w[i][j] / total, p = luma(a, y + i, x + j), q = luma(b, y + i, x + j);
          mx += ww * p;
          my += ww * q;
          sxx += ww * p * p;
          syy += ww * q * q;
          sxy += ww * p * q;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return sum / static_cast<double>((H - 10) * (W - 10));
}

inline double psnr_oracle(const Tensor& a, const Tensor& b) {
  double se = 0.0;
  for (Index i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  return 10.0 * std::log10(1.0 / (se / static_cast<double>(a.numel())));
}

/// Whether two pixels of the rolled map (roll by -s on both axes) were
/// neighbours in the original map without crossing the wrap-around seam.
inline bool same_region_oracle(Index y1, Index x1, Index y2, Index x2, Index H, Index W, Index s) {
  return ((y1 + s) % H) - ((y2 + s) % H) == y1 - y2 && ((x1 + s) % W) - ((x2 + s) % W) == x1 - x2;
}

/// In-memory septuplet samples rendered by the synthetic generator.
inline std::vector<Sample> synthetic_samples(const SyntheticSpec& spec) {
  std::vector<Sample> out;
  for (Index i = 0; i < spec.sequences; ++i) {
    const auto frames = render_sequence(spec, i);
    const Index H = spec.canvas_height, W = spec.canvas_width;
    Sample s{Tensor({4, 3, H, W}), frames[static_cast<std::size_t>(kTargetFrameIndex)], "seq" + std::to_string(i)};
    for (Index t = 0; t < 4; ++t) {
      const Tensor& f = frames[static_cast<std::size_t>(kInputFrameIndices[static_cast<std::size_t>(t)])];
      std::copy(f.values().begin(), f.values().end(), s.inputs.values().begin() + t * 3 * H * W);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vfit::testing

#endif  // VFIT_TESTS_SUPPORT_HPP_
