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

#include "vfit/windowing.hpp"

#include "vfit/nn.hpp"

namespace vfit {
namespace {

Index wrap(Index v, Index n) {
  const Index r = v % n;
  return r < 0 ? r + n : r;
}

}  // namespace

const char* to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::Cube:
      return "cube";
    case PartitionKind::Window:
      return "window";
    case PartitionKind::Temporal:
      return "temporal";
  }
  return "?";
}

FeatureShape feature_shape(const Shape& s) {
  if (s.size() != 4) throw ShapeError("feature map must be [C, T, H, W], got " + shape_str(s));
  for (Index d : s) {
    if (d < 1) throw ShapeError("feature map has an empty axis: " + shape_str(s));
  }
  return {s[0], s[1], s[2], s[3]};
}

FeatureShape feature_shape(const Tensor& x) { return feature_shape(x.shape()); }

PartitionLayout make_layout(PartitionKind kind, const FeatureShape& shape, Index window, Index shift) {
  PartitionLayout l;
  l.kind = kind;
  l.shape = shape;
  if (kind == PartitionKind::Temporal) {
    if (shift != 0) throw ShapeError("temporal partition has no shift");
    l.window = 1;
    l.groups = shape.height * shape.width;
    l.tokens = shape.frames;
    return l;
  }
  if (window < 1) throw ShapeError("window size must be positive");
  if (shape.height % window != 0) {
    throw ShapeError("height " + std::to_string(shape.height) + " is not divisible by window " + std::to_string(window));
  }
  if (shape.width % window != 0) {
    throw ShapeError("width " + std::to_string(shape.width) + " is not divisible by window " + std::to_string(window));
  }
  if (shift < 0 || shift >= window) throw ShapeError("shift must lie in [0, window)");
  l.window = window;
  l.shift = shift;
  const Index tiles = (shape.height / window) * (shape.width / window);
  if (kind == PartitionKind::Cube) {
    l.groups = tiles;
    l.tokens = shape.frames * window * window;
  } else {
    l.groups = shape.frames * tiles;
    l.tokens = window * window;
  }
  return l;
}

std::vector<Index> token_sources(const PartitionLayout& l) {
  const Index T = l.shape.frames, H = l.shape.height, W = l.shape.width;
  std::vector<Index> src(static_cast<std::size_t>(l.groups * l.tokens));
  auto pos = [&](Index t, Index y, Index x) { return (t * H + wrap(y + l.shift, H)) * W + wrap(x + l.shift, W); };
  std::size_t i = 0;
  switch (l.kind) {
    case PartitionKind::Temporal:
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          for (Index t = 0; t < T; ++t) src[i++] = (t * H + y) * W + x;
      break;
    case PartitionKind::Cube: {
      const Index M = l.window;
      for (Index wy = 0; wy < H / M; ++wy)
        for (Index wx = 0; wx < W / M; ++wx)
          for (Index t = 0; t < T; ++t)
            for (Index dy = 0; dy < M; ++dy)
              for (Index dx = 0; dx < M; ++dx) src[i++] = pos(t, wy * M + dy, wx * M + dx);
      break;
    }
    case PartitionKind::Window: {
      const Index M = l.window;
      for (Index t = 0; t < T; ++t)
        for (Index wy = 0; wy < H / M; ++wy)
          for (Index wx = 0; wx < W / M; ++wx)
            for (Index dy = 0; dy < M; ++dy)
              for (Index dx = 0; dx < M; ++dx) src[i++] = pos(t, wy * M + dy, wx * M + dx);
      break;
    }
  }
  return src;
}

std::vector<Index> group_gather_index(const PartitionLayout& l) {
  const Index C = l.shape.channels, P = l.shape.positions();
  const auto src = token_sources(l);
  std::vector<Index> idx(static_cast<std::size_t>(l.groups * l.tokens * C));
  std::size_t i = 0;
  for (Index s : src)
    for (Index c = 0; c < C; ++c) idx[i++] = c * P + s;
  return idx;
}

std::vector<Index> merge_gather_index(const PartitionLayout& l) {
  const Index C = l.shape.channels, P = l.shape.positions();
  const auto src = token_sources(l);
  std::vector<Index> idx(static_cast<std::size_t>(C * P));
  for (std::size_t token = 0; token < src.size(); ++token)
    for (Index c = 0; c < C; ++c) idx[static_cast<std::size_t>(c * P + src[token])] = static_cast<Index>(token) * C + c;
  return idx;
}

TokenGroups partition(const Tensor& x, PartitionKind kind, Index window, Index shift) {
  const PartitionLayout l = make_layout(kind, feature_shape(x), window, shift);
  const auto idx = group_gather_index(l);
  Tensor data({l.groups, l.tokens, l.shape.channels});
  for (std::size_t i = 0; i < idx.size(); ++i) data[static_cast<Index>(i)] = x[idx[i]];
  return {std::move(data), l};
}

TokenGroups partition_cubes(const Tensor& x, Index window, Index shift) {
  return partition(x, PartitionKind::Cube, window, shift);
}

TokenGroups partition_windows(const Tensor& x, Index window, Index shift) {
  return partition(x, PartitionKind::Window, window, shift);
}

TokenGroups partition_temporal(const Tensor& x) { return partition(x, PartitionKind::Temporal, 1, 0); }

Tensor merge(const TokenGroups& g) {
  const PartitionLayout& l = g.layout;
  if (g.data.shape() != Shape{l.groups, l.tokens, l.shape.channels}) {
    throw ShapeError("merge: token data " + shape_str(g.data.shape()) + " does not match its layout");
  }
  const auto idx = merge_gather_index(l);
  Tensor out({l.shape.channels, l.shape.frames, l.shape.height, l.shape.width});
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = g.data[idx[i]];
  return out;
}

Tensor cyclic_shift(const Tensor& x, Index dy, Index dx) {
  const FeatureShape s = feature_shape(x);
  Tensor out(x.shape());
  const Index planes = s.channels * s.frames;
  for (Index p = 0; p < planes; ++p) {
    const double* src = x.data() + p * s.height * s.width;
    double* dst = out.data() + p * s.height * s.width;
    for (Index y = 0; y < s.height; ++y)
      for (Index xx = 0; xx < s.width; ++xx)
        dst[y * s.width + xx] = src[wrap(y - dy, s.height) * s.width + wrap(xx - dx, s.width)];
  }
  return out;
}

std::vector<Index> shift_region_labels(Index H, Index W, Index M, Index shift) {
  // Rows [0, H-M), [H-M, H-shift), [H-shift, H) of the rolled map come from
  // distinct pre-shift blocks; likewise for columns.
  auto band = [&](Index v, Index n) -> Index {
    if (shift == 0) return 0;
    if (v < n - M) return 0;
    if (v < n - shift) return 1;
    return 2;
  };
  std::vector<Index> labels(static_cast<std::size_t>(H * W));
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) labels[static_cast<std::size_t>(y * W + x)] = band(y, H) * 3 + band(x, W);
  return labels;
}

AttentionMask shift_mask(Index H, Index W, Index M, Index shift, PartitionKind kind, Index frames) {
  if (kind == PartitionKind::Temporal) throw ShapeError("temporal partitions are never shifted");
  if (shift < 0 || shift >= M) {
    throw ShapeError("invalid shift " + std::to_string(shift) + " for window " + std::to_string(M));
  }
  const PartitionLayout l = make_layout(kind, FeatureShape{1, frames, H, W}, M, 0);
  const auto labels = shift_region_labels(H, W, M, shift);
  // Token sources of the unshifted layout are positions in the rolled frame.
  const auto src = token_sources(l);
  const Index G = l.groups, N = l.tokens;
  Tensor mask({G, N, N});
  for (Index g = 0; g < G; ++g) {
    for (Index i = 0; i < N; ++i) {
      const Index li = labels[static_cast<std::size_t>(src[static_cast<std::size_t>(g * N + i)] % (H * W))];
      for (Index j = 0; j < N; ++j) {
        const Index lj = labels[static_cast<std::size_t>(src[static_cast<std::size_t>(g * N + j)] % (H * W))];
        mask[(g * N + i) * N + j] = li == lj ? 0.0 : nn::kMaskedScore;
      }
    }
  }
  return {std::move(mask)};
}

Index relative_table_rows(PartitionKind kind, Index window, Index frames) {
  const Index span = 2 * window - 1;
  switch (kind) {
    case PartitionKind::Window:
      return span * span;
    case PartitionKind::Cube:
      return (2 * frames - 1) * span * span;
    case PartitionKind::Temporal:
      return 2 * frames - 1;
  }
  return 0;
}

std::vector<Index> relative_position_index(PartitionKind kind, Index M, Index frames, Index table_window,
                                           Index table_frames) {
  if (M > table_window || frames > table_frames) {
    throw ShapeError("relative position table too small for window " + std::to_string(M) + " and " +
                     std::to_string(frames) + " frames");
  }
  struct Coord {
    Index t, y, x;
  };
  std::vector<Coord> coords;
  if (kind == PartitionKind::Temporal) {
    for (Index t = 0; t < frames; ++t) coords.push_back({t, 0, 0});
  } else {
    const Index T = kind == PartitionKind::Cube ? frames : 1;
    for (Index t = 0; t < T; ++t)
      for (Index y = 0; y < M; ++y)
        for (Index x = 0; x < M; ++x) coords.push_back({t, y, x});
  }
  const Index span = 2 * table_window - 1;
  const Index N = static_cast<Index>(coords.size());
  std::vector<Index> idx(static_cast<std::size_t>(N * N));
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < N; ++j) {
      const Coord& a = coords[static_cast<std::size_t>(i)];
      const Coord& b = coords[static_cast<std::size_t>(j)];
      const Index rt = a.t - b.t + table_frames - 1;
      const Index ry = a.y - b.y + table_window - 1;
      const Index rx = a.x - b.x + table_window - 1;
      Index row = 0;
      switch (kind) {
        case PartitionKind::Temporal:
          row = rt;
          break;
        case PartitionKind::Window:
          row = ry * span + rx;
          break;
        case PartitionKind::Cube:
          row = (rt * span + ry) * span + rx;
          break;
      }
      idx[static_cast<std::size_t>(i * N + j)] = row;
    }
  return idx;
}

}  // namespace vfit
