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

#include "vfit/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace vfit::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

ConstMatMap cmat(const Tensor& t, Index rows, Index cols) { return ConstMatMap(t.data(), rows, cols); }
MatMap mat(Tensor& t, Index rows, Index cols) { return MatMap(t.data(), rows, cols); }

void check_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

bool wants(const Node& n, std::size_t i) { return n.inputs.size() > i && n.inputs[i]->requires_grad; }

// Column buffer layout: rows (c, kt, kh, kw), columns (to, ho, wo).
struct VolGeometry {
  Index channels, t, h, w;     // the convolution input volume
  Index out_t, out_h, out_w;   // the convolution output grid
  Conv3dGeometry g;
};

void vol2col(const double* x, const VolGeometry& v, double* col) {
  const auto& k = v.g.kernel;
  const auto& s = v.g.stride;
  const auto& p = v.g.pad;
  const Index ncol = v.out_t * v.out_h * v.out_w;
  Index row = 0;
  for (Index c = 0; c < v.channels; ++c) {
    const double* xc = x + c * v.t * v.h * v.w;
    for (Index a = 0; a < k[0]; ++a) {
      for (Index b = 0; b < k[1]; ++b) {
        for (Index d = 0; d < k[2]; ++d, ++row) {
          double* out = col + row * ncol;
          for (Index to = 0; to < v.out_t; ++to) {
            const Index ti = to * s[0] - p[0] + a;
            for (Index ho = 0; ho < v.out_h; ++ho) {
              const Index hi = ho * s[1] - p[1] + b;
              double* dst = out + (to * v.out_h + ho) * v.out_w;
              if (ti < 0 || ti >= v.t || hi < 0 || hi >= v.h) {
                std::fill(dst, dst + v.out_w, 0.0);
                continue;
              }
              const double* src = xc + (ti * v.h + hi) * v.w;
              for (Index wo = 0; wo < v.out_w; ++wo) {
                const Index wi = wo * s[2] - p[2] + d;
                dst[wo] = (wi >= 0 && wi < v.w) ? src[wi] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2vol(const double* col, const VolGeometry& v, double* x) {
  const auto& k = v.g.kernel;
  const auto& s = v.g.stride;
  const auto& p = v.g.pad;
  const Index ncol = v.out_t * v.out_h * v.out_w;
  Index row = 0;
  for (Index c = 0; c < v.channels; ++c) {
    double* xc = x + c * v.t * v.h * v.w;
    for (Index a = 0; a < k[0]; ++a) {
      for (Index b = 0; b < k[1]; ++b) {
        for (Index d = 0; d < k[2]; ++d, ++row) {
          const double* in = col + row * ncol;
          for (Index to = 0; to < v.out_t; ++to) {
            const Index ti = to * s[0] - p[0] + a;
            if (ti < 0 || ti >= v.t) continue;
            for (Index ho = 0; ho < v.out_h; ++ho) {
              const Index hi = ho * s[1] - p[1] + b;
              if (hi < 0 || hi >= v.h) continue;
              const double* src = in + (to * v.out_h + ho) * v.out_w;
              double* dst = xc + (ti * v.h + hi) * v.w;
              for (Index wo = 0; wo < v.out_w; ++wo) {
                const Index wi = wo * s[2] - p[2] + d;
                if (wi >= 0 && wi < v.w) dst[wi] += src[wo];
              }
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const Conv3dGeometry& g) {
  return g.kernel == std::array<Index, 3>{1, 1, 1} && g.stride == std::array<Index, 3>{1, 1, 1} &&
         g.pad == std::array<Index, 3>{0, 0, 0};
}

Index conv_out(Index in, Index k, Index s, Index p, const char* axis) {
  const Index span = in + 2 * p - k;
  if (span < 0) throw ShapeError(std::string("conv3d: kernel larger than padded input along ") + axis);
  return span / s + 1;
}

// Separable 1-D bilinear taps for half-pixel-centre resizing.
struct Taps {
  std::vector<Index> i0, i1;
  std::vector<double> w1;
};

Taps bilinear_taps(Index in, Index out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    Index i0 = static_cast<Index>(src);
    if (i0 > in - 1) i0 = in - 1;
    t.i0[o] = i0;
    t.i1[o] = i0 < in - 1 ? i0 + 1 : i0;
    t.w1[o] = src - static_cast<double>(i0);
  }
  return t;
}

void resize_forward(const double* x, Index batch, Index ih, Index iw, Index oh, Index ow, const Taps& ty,
                    const Taps& tx, double* out) {
  for (Index b = 0; b < batch; ++b) {
    const double* xb = x + b * ih * iw;
    double* ob = out + b * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      const double wy1 = ty.w1[y];
      const double* r0 = xb + ty.i0[y] * iw;
      const double* r1 = xb + ty.i1[y] * iw;
      for (Index x_ = 0; x_ < ow; ++x_) {
        const double wx1 = tx.w1[x_];
        const Index a = tx.i0[x_], c = tx.i1[x_];
        // Interpolating as a + w * (b - a) reproduces constant inputs exactly.
        const double top = r0[a] + wx1 * (r0[c] - r0[a]);
        const double bottom = r1[a] + wx1 * (r1[c] - r1[a]);
        ob[y * ow + x_] = top + wy1 * (bottom - top);
      }
    }
  }
}

}  // namespace

// ---- elementwise / structural ------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (Index i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(n, k)) continue;
      Tensor& g = n.inputs[k]->grad_buffer();
      for (Index i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (Index i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (wants(n, 0)) {
      Tensor& g = n.inputs[0]->grad_buffer();
      for (Index i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants(n, 1)) {
      Tensor& g = n.inputs[1]->grad_buffer();
      for (Index i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Tensor& g = n.inputs[0]->grad_buffer();
    for (Index i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_op(Tensor({1}, total), {x}, [](Node& n) {
    Tensor& g = n.inputs[0]->grad_buffer();
    const double up = n.grad[0];
    for (Index i = 0; i < g.numel(); ++i) g[i] += up;
  });
}

Var weighted_sum(const Var& x, const Tensor& w) {
  require_same_shape(x.value(), w, "weighted_sum");
  double total = 0.0;
  for (Index i = 0; i < w.numel(); ++i) total += x.value()[i] * w[i];
  return make_op(Tensor({1}, total), {x}, [w](Node& n) {
    Tensor& g = n.inputs[0]->grad_buffer();
    const double up = n.grad[0];
    for (Index i = 0; i < g.numel(); ++i) g[i] += up * w[i];
  });
}

Var mean_abs_diff(const Var& pred, const Tensor& target) {
  require_same_shape(pred.value(), target, "l1 loss");
  const Index count = target.numel();
  if (count == 0) throw ShapeError("l1 loss on empty tensor");
  double total = 0.0;
  for (Index i = 0; i < count; ++i) total += std::abs(pred.value()[i] - target[i]);
  return make_op(Tensor({1}, total / static_cast<double>(count)), {pred}, [target, count](Node& n) {
    Tensor& g = n.inputs[0]->grad_buffer();
    const Tensor& p = n.inputs[0]->value;
    const double up = n.grad[0] / static_cast<double>(count);
    for (Index i = 0; i < count; ++i) {
      const double d = p[i] - target[i];
      g[i] += d > 0.0 ? up : (d < 0.0 ? -up : 0.0);
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = n.inputs[0]->grad_buffer();
    for (Index i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

Var gather(const Var& x, IndexMap index, Shape out_shape) {
  const Index count = shape_numel(out_shape);
  if (static_cast<Index>(index->size()) != count) {
    throw ShapeError("gather: index size " + std::to_string(index->size()) + " does not match " + shape_str(out_shape));
  }
  Tensor out(std::move(out_shape));
  const Tensor& xv = x.value();
  const Index limit = xv.numel();
  for (Index i = 0; i < count; ++i) {
    const Index src = (*index)[static_cast<std::size_t>(i)];
    if (src < 0 || src >= limit) throw ShapeError("gather: index out of range");
    out[i] = xv[src];
  }
  return make_op(std::move(out), {x}, [index](Node& n) {
    Tensor& g = n.inputs[0]->grad_buffer();
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += n.grad[static_cast<Index>(i)];
  });
}

Var concat0(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  Index lead = 0;
  for (const Var& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw ShapeError("concat0: trailing shape mismatch " + shape_str(p.shape()));
    lead += p.dim(0);
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  std::vector<Index> offsets;
  Index off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data(), p.value().data() + p.value().numel(), out.data() + off);
    off += p.value().numel();
  }
  return make_op(std::move(out), parts, [offsets](Node& n) {
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!n.inputs[k]->requires_grad) continue;
      Tensor& g = n.inputs[k]->grad_buffer();
      for (Index i = 0; i < g.numel(); ++i) g[i] += n.grad[offsets[k] + i];
    }
  });
}

// ---- dense layers --------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
  check_rank(x.value(), 2, "linear");
  check_rank(w.value(), 2, "linear weight");
  const Index rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  Tensor out({rows, out_dim});
  mat(out, rows, out_dim).noalias() = cmat(x.value(), rows, in) * cmat(w.value(), out_dim, in).transpose();
  std::vector<Var> inputs{x, w};
  if (b.defined()) {
    if (b.value().numel() != out_dim) throw ShapeError("linear: bias size mismatch");
    const double* bp = b.value().data();
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < out_dim; ++c) out[r * out_dim + c] += bp[c];
    inputs.push_back(b);
  }
  return make_op(std::move(out), std::move(inputs), [rows, in, out_dim](Node& n) {
    ConstMatMap dy(n.grad.data(), rows, out_dim);
    if (wants(n, 0)) {
      mat(n.inputs[0]->grad_buffer(), rows, in).noalias() += dy * cmat(n.inputs[1]->value, out_dim, in);
    }
    if (wants(n, 1)) {
      mat(n.inputs[1]->grad_buffer(), out_dim, in).noalias() += dy.transpose() * cmat(n.inputs[0]->value, rows, in);
    }
    if (wants(n, 2)) {
      Tensor& g = n.inputs[2]->grad_buffer();
      Eigen::Map<Eigen::RowVectorXd>(g.data(), out_dim) += dy.colwise().sum();
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_rank(x.value(), 2, "layer_norm");
  const Index rows = x.dim(0), cols = x.dim(1);
  if (gamma.value().numel() != cols || beta.value().numel() != cols) {
    throw ShapeError("layer_norm: affine parameters do not match " + std::to_string(cols) + " channels");
  }
  auto normed = std::make_shared<Tensor>(Shape{rows, cols});
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  Tensor out({rows, cols});
  const double* xp = x.value().data();
  const double* gp = gamma.value().data();
  const double* bp = beta.value().data();
  for (Index r = 0; r < rows; ++r) {
    const double* row = xp + r * cols;
    double mean = 0.0;
    for (Index c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (Index c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (Index c = 0; c < cols; ++c) {
      const double h = (row[c] - mean) * rs;
      (*normed)[r * cols + c] = h;
      out[r * cols + c] = h * gp[c] + bp[c];
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [normed, rstd, rows, cols](Node& n) {
    const double* gp = n.inputs[1]->value.data();
    const double* dy = n.grad.data();
    if (wants(n, 1) || wants(n, 2)) {
      Tensor* gg = wants(n, 1) ? &n.inputs[1]->grad_buffer() : nullptr;
      Tensor* gb = wants(n, 2) ? &n.inputs[2]->grad_buffer() : nullptr;
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) {
          const double d = dy[r * cols + c];
          if (gg) (*gg)[c] += d * (*normed)[r * cols + c];
          if (gb) (*gb)[c] += d;
        }
    }
    if (wants(n, 0)) {
      Tensor& gx = n.inputs[0]->grad_buffer();
      const double inv = 1.0 / static_cast<double>(cols);
      for (Index r = 0; r < rows; ++r) {
        double mean_d = 0.0, mean_dh = 0.0;
        for (Index c = 0; c < cols; ++c) {
          const double d = dy[r * cols + c] * gp[c];
          mean_d += d;
          mean_dh += d * (*normed)[r * cols + c];
        }
        mean_d *= inv;
        mean_dh *= inv;
        const double rs = (*rstd)[r];
        for (Index c = 0; c < cols; ++c) {
          const double d = dy[r * cols + c] * gp[c];
          gx[r * cols + c] += rs * (d - mean_d - (*normed)[r * cols + c] * mean_dh);
        }
      }
    }
  });
}

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_op(std::move(out), {x}, [](Node& n) {
    const Tensor& xv = n.inputs[0]->value;
    Tensor& g = n.inputs[0]->grad_buffer();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Index i = 0; i < g.numel(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis out of range");
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const Index len = s[axis];
  Tensor out(s);
  const double* xp = x.value().data();
  for (Index o = 0; o < outer; ++o)
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      double mx = xp[base];
      for (Index k = 1; k < len; ++k) mx = std::max(mx, xp[base + k * inner]);
      double z = 0.0;
      for (Index k = 0; k < len; ++k) {
        const double e = std::exp(xp[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (Index k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  Tensor probs = out;
  return make_op(std::move(out), {x}, [probs = std::move(probs), outer, inner, len](Node& n) {
    Tensor& g = n.inputs[0]->grad_buffer();
    for (Index o = 0; o < outer; ++o)
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * len * inner + in;
        double dot = 0.0;
        for (Index k = 0; k < len; ++k) dot += n.grad[base + k * inner] * probs[base + k * inner];
        for (Index k = 0; k < len; ++k) {
          const Index i = base + k * inner;
          g[i] += probs[i] * (n.grad[i] - dot);
        }
      }
  });
}

// ---- convolutions ------------------------------------------------------------

Var conv3d(const Var& x, const Var& w, const Var& b, const Conv3dGeometry& geom) {
  check_rank(x.value(), 4, "conv3d");
  check_rank(w.value(), 5, "conv3d weight");
  const Index cin = x.dim(0), cout = w.dim(0);
  if (w.dim(1) != cin || w.dim(2) != geom.kernel[0] || w.dim(3) != geom.kernel[1] || w.dim(4) != geom.kernel[2]) {
    throw ShapeError("conv3d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  VolGeometry v{cin,
                x.dim(1),
                x.dim(2),
                x.dim(3),
                conv_out(x.dim(1), geom.kernel[0], geom.stride[0], geom.pad[0], "time"),
                conv_out(x.dim(2), geom.kernel[1], geom.stride[1], geom.pad[1], "height"),
                conv_out(x.dim(3), geom.kernel[2], geom.stride[2], geom.pad[2], "width"),
                geom};
  const Index ncol = v.out_t * v.out_h * v.out_w;
  const Index krows = cin * geom.kernel[0] * geom.kernel[1] * geom.kernel[2];
  const bool pointwise = is_pointwise(geom);

  std::shared_ptr<Tensor> col;
  if (!pointwise) {
    col = std::make_shared<Tensor>(Shape{krows, ncol});
    vol2col(x.value().data(), v, col->data());
  }
  const Tensor& colv = pointwise ? x.value() : *col;

  Tensor out({cout, v.out_t, v.out_h, v.out_w});
  mat(out, cout, ncol).noalias() = cmat(w.value(), cout, krows) * cmat(colv, krows, ncol);
  std::vector<Var> inputs{x, w};
  if (b.defined()) {
    if (b.value().numel() != cout) throw ShapeError("conv3d: bias size mismatch");
    for (Index c = 0; c < cout; ++c) {
      const double bc = b.value()[c];
      double* row = out.data() + c * ncol;
      for (Index i = 0; i < ncol; ++i) row[i] += bc;
    }
    inputs.push_back(b);
  }
  return make_op(std::move(out), std::move(inputs), [col, v, ncol, krows, cout, pointwise](Node& n) {
    ConstMatMap dy(n.grad.data(), cout, ncol);
    const Tensor& colv = pointwise ? n.inputs[0]->value : *col;
    if (wants(n, 1)) {
      mat(n.inputs[1]->grad_buffer(), cout, krows).noalias() += dy * cmat(colv, krows, ncol).transpose();
    }
    if (wants(n, 2)) {
      Tensor& g = n.inputs[2]->grad_buffer();
      Eigen::Map<Eigen::VectorXd>(g.data(), cout) += dy.rowwise().sum();
    }
    if (wants(n, 0)) {
      Tensor& gx = n.inputs[0]->grad_buffer();
      if (pointwise) {
        mat(gx, krows, ncol).noalias() += cmat(n.inputs[1]->value, cout, krows).transpose() * dy;
      } else {
        Tensor dcol({krows, ncol});
        mat(dcol, krows, ncol).noalias() = cmat(n.inputs[1]->value, cout, krows).transpose() * dy;
        col2vol(dcol.data(), v, gx.data());
      }
    }
  });
}

Var conv_transpose3d(const Var& x, const Var& w, const Var& b, const Conv3dGeometry& geom) {
  check_rank(x.value(), 4, "conv_transpose3d");
  check_rank(w.value(), 5, "conv_transpose3d weight");
  const Index cin = x.dim(0), cout = w.dim(1);
  if (w.dim(0) != cin || w.dim(2) != geom.kernel[0] || w.dim(3) != geom.kernel[1] || w.dim(4) != geom.kernel[2]) {
    throw ShapeError("conv_transpose3d: weight " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  auto extent = [&](Index in, std::size_t a) { return (in - 1) * geom.stride[a] - 2 * geom.pad[a] + geom.kernel[a]; };
  VolGeometry v{cout, extent(x.dim(1), 0), extent(x.dim(2), 1), extent(x.dim(3), 2), x.dim(1), x.dim(2), x.dim(3),
                geom};
  if (v.t <= 0 || v.h <= 0 || v.w <= 0) throw ShapeError("conv_transpose3d: empty output");
  const Index nin = x.dim(1) * x.dim(2) * x.dim(3);
  const Index krows = cout * geom.kernel[0] * geom.kernel[1] * geom.kernel[2];

  Tensor col({krows, nin});
  mat(col, krows, nin).noalias() = cmat(w.value(), cin, krows).transpose() * cmat(x.value(), cin, nin);
  Tensor out({cout, v.t, v.h, v.w});
  col2vol(col.data(), v, out.data());
  const Index nout = v.t * v.h * v.w;
  std::vector<Var> inputs{x, w};
  if (b.defined()) {
    if (b.value().numel() != cout) throw ShapeError("conv_transpose3d: bias size mismatch");
    for (Index c = 0; c < cout; ++c) {
      double* row = out.data() + c * nout;
      for (Index i = 0; i < nout; ++i) row[i] += b.value()[c];
    }
    inputs.push_back(b);
  }
  return make_op(std::move(out), std::move(inputs), [v, cin, cout, krows, nin, nout](Node& n) {
    Tensor dcol({krows, nin});
    vol2col(n.grad.data(), v, dcol.data());
    if (wants(n, 0)) {
      mat(n.inputs[0]->grad_buffer(), cin, nin).noalias() += cmat(n.inputs[1]->value, cin, krows) * cmat(dcol, krows, nin);
    }
    if (wants(n, 1)) {
      mat(n.inputs[1]->grad_buffer(), cin, krows).noalias() +=
          cmat(n.inputs[0]->value, cin, nin) * cmat(dcol, krows, nin).transpose();
    }
    if (wants(n, 2)) {
      Tensor& g = n.inputs[2]->grad_buffer();
      ConstMatMap dy(n.grad.data(), cout, nout);
      Eigen::Map<Eigen::VectorXd>(g.data(), cout) += dy.rowwise().sum();
    }
  });
}

// ---- resampling ----------------------------------------------------------------

Tensor resize_bilinear(const Tensor& x, Index out_h, Index out_w) {
  if (x.rank() < 2) throw ShapeError("resize_bilinear: need at least two axes");
  if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: empty output size");
  const Index ih = x.dim(x.rank() - 2), iw = x.dim(x.rank() - 1);
  const Index batch = x.numel() / (ih * iw);
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  Tensor out(shape);
  resize_forward(x.data(), batch, ih, iw, out_h, out_w, bilinear_taps(ih, out_h), bilinear_taps(iw, out_w), out.data());
  return out;
}

Var resize_bilinear(const Var& x, Index out_h, Index out_w) {
  Tensor out = resize_bilinear(x.value(), out_h, out_w);
  const Index ih = x.dim(x.shape().size() - 2), iw = x.dim(x.shape().size() - 1);
  const Index batch = x.value().numel() / (ih * iw);
  return make_op(std::move(out), {x}, [ih, iw, out_h, out_w, batch](Node& n) {
    const Taps ty = bilinear_taps(ih, out_h);
    const Taps tx = bilinear_taps(iw, out_w);
    Tensor& g = n.inputs[0]->grad_buffer();
    for (Index b = 0; b < batch; ++b) {
      double* gb = g.data() + b * ih * iw;
      const double* dy = n.grad.data() + b * out_h * out_w;
      for (Index y = 0; y < out_h; ++y) {
        const double wy1 = ty.w1[y], wy0 = 1.0 - wy1;
        double* r0 = gb + ty.i0[y] * iw;
        double* r1 = gb + ty.i1[y] * iw;
        for (Index x_ = 0; x_ < out_w; ++x_) {
          const double d = dy[y * out_w + x_];
          const double wx1 = tx.w1[x_], wx0 = 1.0 - wx1;
          r0[tx.i0[x_]] += d * wy0 * wx0;
          r0[tx.i1[x_]] += d * wy0 * wx1;
          r1[tx.i0[x_]] += d * wy1 * wx0;
          r1[tx.i1[x_]] += d * wy1 * wx1;
        }
      }
    }
  });
}

std::vector<std::array<Index, 2>> deformable_base_grid(Index taps) {
  if (taps < 1) throw ShapeError("deformable kernel needs at least one tap");
  Index side = 1;
  while (side * side < taps) ++side;
  const Index centre = (side - 1) / 2;
  std::vector<std::array<Index, 2>> grid;
  grid.reserve(static_cast<std::size_t>(taps));
  for (Index k = 0; k < taps; ++k) grid.push_back({k % side - centre, k / side - centre});
  return grid;
}

Var deform_aggregate(const Var& frames, const Var& weight, const Var& off_x, const Var& off_y) {
  check_rank(frames.value(), 4, "deform_aggregate frames");
  check_rank(weight.value(), 4, "deform_aggregate weight");
  const Index T = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  const Index K = weight.dim(0);
  const Shape kshape{K, T, H, W};
  if (weight.shape() != kshape || off_x.shape() != kshape || off_y.shape() != kshape) {
    throw ShapeError("deform_aggregate: kernel tensors must be " + shape_str(kshape) + ", got " +
                     shape_str(weight.shape()) + ", " + shape_str(off_x.shape()) + ", " + shape_str(off_y.shape()));
  }
  const auto grid = deformable_base_grid(K);
  const Index plane = H * W;
  Tensor out({T, C, H, W});
  const double* I = frames.value().data();
  const double* wk = weight.value().data();
  const double* ax = off_x.value().data();
  const double* ay = off_y.value().data();
  const double xmax = static_cast<double>(W - 1), ymax = static_cast<double>(H - 1);

  for (Index t = 0; t < T; ++t) {
    const double* It = I + t * C * plane;
    double* Ot = out.data() + t * C * plane;
    for (Index k = 0; k < K; ++k) {
      const Index koff = (k * T + t) * plane;
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) {
          const Index p = y * W + x;
          const double px = std::clamp(static_cast<double>(x + grid[k][0]) + ax[koff + p], 0.0, xmax);
          const double py = std::clamp(static_cast<double>(y + grid[k][1]) + ay[koff + p], 0.0, ymax);
          const Index x0 = static_cast<Index>(px), y0 = static_cast<Index>(py);
          const Index x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
          const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
          const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
          const double wv = wk[koff + p];
          for (Index c = 0; c < C; ++c) {
            const double* Ic = It + c * plane;
            Ot[c * plane + p] +=
                wv * (w00 * Ic[y0 * W + x0] + w01 * Ic[y0 * W + x1] + w10 * Ic[y1 * W + x0] + w11 * Ic[y1 * W + x1]);
          }
        }
    }
  }

  return make_op(std::move(out), {frames, weight, off_x, off_y}, [grid, T, C, H, W, K](Node& n) {
    const Index plane = H * W;
    const double* I = n.inputs[0]->value.data();
    const double* wk = n.inputs[1]->value.data();
    const double* ax = n.inputs[2]->value.data();
    const double* ay = n.inputs[3]->value.data();
    double* gI = wants(n, 0) ? n.inputs[0]->grad_buffer().data() : nullptr;
    double* gW = wants(n, 1) ? n.inputs[1]->grad_buffer().data() : nullptr;
    double* gX = wants(n, 2) ? n.inputs[2]->grad_buffer().data() : nullptr;
    double* gY = wants(n, 3) ? n.inputs[3]->grad_buffer().data() : nullptr;
    const double xmax = static_cast<double>(W - 1), ymax = static_cast<double>(H - 1);
    for (Index t = 0; t < T; ++t) {
      const double* It = I + t * C * plane;
      const double* dO = n.grad.data() + t * C * plane;
      for (Index k = 0; k < K; ++k) {
        const Index koff = (k * T + t) * plane;
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x) {
            const Index p = y * W + x;
            const double rx = static_cast<double>(x + grid[k][0]) + ax[koff + p];
            const double ry = static_cast<double>(y + grid[k][1]) + ay[koff + p];
            const double px = std::clamp(rx, 0.0, xmax), py = std::clamp(ry, 0.0, ymax);
            const Index x0 = static_cast<Index>(px), y0 = static_cast<Index>(py);
            const Index x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
            const double wv = wk[koff + p];
            double dw = 0.0, dfx = 0.0, dfy = 0.0;
            for (Index c = 0; c < C; ++c) {
              const double* Ic = It + c * plane;
              const double v00 = Ic[y0 * W + x0], v01 = Ic[y0 * W + x1];
              const double v10 = Ic[y1 * W + x0], v11 = Ic[y1 * W + x1];
              const double d = dO[c * plane + p];
              dw += d * ((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
              dfx += d * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
              dfy += d * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
              if (gI) {
                double* gc = gI + t * C * plane + c * plane;
                const double s = d * wv;
                gc[y0 * W + x0] += s * (1 - fy) * (1 - fx);
                gc[y0 * W + x1] += s * (1 - fy) * fx;
                gc[y1 * W + x0] += s * fy * (1 - fx);
                gc[y1 * W + x1] += s * fy * fx;
              }
            }
            if (gW) gW[koff + p] += dw;
            // Clamped coordinates carry no gradient.
            if (gX && rx > 0.0 && rx < xmax) gX[koff + p] += wv * dfx;
            if (gY && ry > 0.0 && ry < ymax) gY[koff + p] += wv * dfy;
          }
      }
    }
  });
}

Var blend(const Var& masks, const Var& frames) {
  check_rank(masks.value(), 3, "blend masks");
  check_rank(frames.value(), 4, "blend frames");
  const Index T = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  if (masks.shape() != Shape{T, H, W}) {
    throw ShapeError("blend: masks " + shape_str(masks.shape()) + " do not match frames " + shape_str(frames.shape()));
  }
  const Index plane = H * W;
  Tensor out({C, H, W});
  const double* m = masks.value().data();
  const double* f = frames.value().data();
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c)
      for (Index p = 0; p < plane; ++p) out[c * plane + p] += m[t * plane + p] * f[(t * C + c) * plane + p];
  return make_op(std::move(out), {masks, frames}, [T, C, plane](Node& n) {
    const double* m = n.inputs[0]->value.data();
    const double* f = n.inputs[1]->value.data();
    double* gm = wants(n, 0) ? n.inputs[0]->grad_buffer().data() : nullptr;
    double* gf = wants(n, 1) ? n.inputs[1]->grad_buffer().data() : nullptr;
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c)
        for (Index p = 0; p < plane; ++p) {
          const double d = n.grad[c * plane + p];
          if (gm) gm[t * plane + p] += d * f[(t * C + c) * plane + p];
          if (gf) gf[(t * C + c) * plane + p] += d * m[t * plane + p];
        }
  });
}

// ---- attention -----------------------------------------------------------------

AttentionStats& attention_stats() {
  thread_local AttentionStats stats;
  return stats;
}

void reset_attention_stats() { attention_stats() = AttentionStats{}; }

AttentionProbe& attention_probe() {
  thread_local AttentionProbe probe;
  return probe;
}

Var attention(const Var& qkv, Index heads, const Var& bias, const Tensor* mask) {
  check_rank(qkv.value(), 3, "attention");
  const Index G = qkv.dim(0), N = qkv.dim(1);
  if (qkv.dim(2) % 3 != 0) throw ShapeError("attention: packed qkv width must be a multiple of 3");
  const Index C = qkv.dim(2) / 3;
  if (heads < 1 || C % heads != 0) {
    throw ConfigError("attention: " + std::to_string(C) + " channels not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const Index d = C / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  if (bias.defined() && bias.shape() != Shape{heads, N, N}) {
    throw ShapeError("attention: bias must be " + shape_str({heads, N, N}) + ", got " + shape_str(bias.shape()));
  }
  if (mask && mask->shape() != Shape{G, N, N}) {
    throw ShapeError("attention: mask must be " + shape_str({G, N, N}) + ", got " + shape_str(mask->shape()));
  }

  auto probs = std::make_shared<Tensor>(Shape{G, heads, N, N});
  Tensor out({G, N, C});
  const double* base = qkv.value().data();
  const Index ld = 3 * C;
  for (Index g = 0; g < G; ++g) {
    const double* tok = base + g * N * ld;
    for (Index h = 0; h < heads; ++h) {
      ConstStridedMap Q(tok + h * d, N, d, Eigen::OuterStride<>(ld));
      ConstStridedMap K(tok + C + h * d, N, d, Eigen::OuterStride<>(ld));
      ConstStridedMap V(tok + 2 * C + h * d, N, d, Eigen::OuterStride<>(ld));
      MatMap P(probs->data() + (g * heads + h) * N * N, N, N);
      P.noalias() = scale * (Q * K.transpose());
      if (bias.defined()) P += ConstMatMap(bias.value().data() + h * N * N, N, N);
      if (mask) P += ConstMatMap(mask->data() + g * N * N, N, N);
      for (Index r = 0; r < N; ++r) {
        auto row = P.row(r);
        const double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
      }
      StridedMap O(out.data() + g * N * C + h * d, N, d, Eigen::OuterStride<>(C));
      O.noalias() = P * V;
    }
  }

  AttentionStats& stats = attention_stats();
  stats.calls += 1;
  stats.pairs += G * N * N;
  stats.score_entries += G * heads * N * N;
  if (attention_probe().record) attention_probe().weights.push_back(*probs);

  std::vector<Var> inputs{qkv};
  if (bias.defined()) inputs.push_back(bias);
  return make_op(std::move(out), std::move(inputs), [probs, G, N, C, heads, d, scale](Node& n) {
    const Index ld = 3 * C;
    const double* base = n.inputs[0]->value.data();
    const bool want_qkv = wants(n, 0);
    const bool want_bias = wants(n, 1);
    double* gq = want_qkv ? n.inputs[0]->grad_buffer().data() : nullptr;
    double* gb = want_bias ? n.inputs[1]->grad_buffer().data() : nullptr;
    RowMat dP(N, N);
    for (Index g = 0; g < G; ++g) {
      const double* tok = base + g * N * ld;
      for (Index h = 0; h < heads; ++h) {
        ConstStridedMap Q(tok + h * d, N, d, Eigen::OuterStride<>(ld));
        ConstStridedMap K(tok + C + h * d, N, d, Eigen::OuterStride<>(ld));
        ConstStridedMap V(tok + 2 * C + h * d, N, d, Eigen::OuterStride<>(ld));
        ConstMatMap P(probs->data() + (g * heads + h) * N * N, N, N);
        ConstStridedMap dO(n.grad.data() + g * N * C + h * d, N, d, Eigen::OuterStride<>(C));
        dP.noalias() = dO * V.transpose();
        // dS = P * (dP - rowsum(dP * P)), stored in place.
        for (Index r = 0; r < N; ++r) {
          const double dot = (dP.row(r).array() * P.row(r).array()).sum();
          dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
        }
        if (gb) MatMap(gb + h * N * N, N, N) += dP;
        if (gq) {
          double* gtok = gq + g * N * ld;
          StridedMap dQ(gtok + h * d, N, d, Eigen::OuterStride<>(ld));
          StridedMap dK(gtok + C + h * d, N, d, Eigen::OuterStride<>(ld));
          StridedMap dV(gtok + 2 * C + h * d, N, d, Eigen::OuterStride<>(ld));
          dV.noalias() += P.transpose() * dO;
          dQ.noalias() += scale * (dP * K);
          dK.noalias() += scale * (dP.transpose() * Q);
        }
      }
    }
  });
}

}  // namespace vfit::nn
