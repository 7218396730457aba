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

// Partition math for local attention over feature volumes laid out as
// [C, T, H, W]:
//   cubes     T x M x M sub-volumes     G = HW / M^2,    N = T M^2
//   windows   M x M per-frame tiles     G = T HW / M^2,  N = M^2
//   temporal  per-pixel time vectors    G = HW,          N = T
// A shifted partition is the regular partition of the map rolled by
// (-shift, -shift); the attention mask keeps tokens that wrapped around the
// border from attending across the seam.

#ifndef VFIT_WINDOWING_HPP_
#define VFIT_WINDOWING_HPP_

#include <vector>

#include "vfit/tensor.hpp"

namespace vfit {

enum class PartitionKind { Cube, Window, Temporal };

const char* to_string(PartitionKind kind);

struct FeatureShape {
  Index channels = 0;
  Index frames = 0;
  Index height = 0;
  Index width = 0;

  Index positions() const { return frames * height * width; }
  bool operator==(const FeatureShape&) const = default;
};

/// Validates a [C, T, H, W] feature map (all extents >= 1).
FeatureShape feature_shape(const Tensor& x);
FeatureShape feature_shape(const Shape& shape);

struct PartitionLayout {
  PartitionKind kind = PartitionKind::Window;
  Index window = 1;  // M; unused for temporal
  Index shift = 0;   // spatial roll toward the top-left
  FeatureShape shape;
  Index groups = 0;  // G
  Index tokens = 0;  // N
};

/// Groups of token feature vectors, data[G, N, C], plus what is needed to undo the partition.
struct TokenGroups {
  Tensor data;
  PartitionLayout layout;
};

/// Additive mask [G, N, N]: 0 where two tokens may attend, nn::kMaskedScore otherwise.
struct AttentionMask {
  Tensor data;
};

/// Throws ShapeError naming the axis when H or W is not a multiple of window.
PartitionLayout make_layout(PartitionKind kind, const FeatureShape& shape, Index window, Index shift = 0);

/// For every (group, token) the flat position (t * H + y) * W + x it reads in the unshifted map.
std::vector<Index> token_sources(const PartitionLayout& layout);

/// Flat [C, T, H, W] source index for each element of the [G, N, C] token tensor.
std::vector<Index> group_gather_index(const PartitionLayout& layout);
/// Flat [G, N, C] source index for each element of the [C, T, H, W] map (the inverse permutation).
std::vector<Index> merge_gather_index(const PartitionLayout& layout);

TokenGroups partition(const Tensor& x, PartitionKind kind, Index window, Index shift = 0);
TokenGroups partition_cubes(const Tensor& x, Index window, Index shift = 0);
TokenGroups partition_windows(const Tensor& x, Index window, Index shift = 0);
TokenGroups partition_temporal(const Tensor& x);
Tensor merge(const TokenGroups& groups);

/// Spatial roll: out[c, t, y, x] = x[c, t, (y - dy) mod H, (x - dx) mod W].
Tensor cyclic_shift(const Tensor& x, Index dy, Index dx);

/// Mask for a (possibly) shifted cube or window partition of an H x W map.
/// `frames` is T; window masks repeat per frame. shift == 0 gives an all-zero mask.
AttentionMask shift_mask(Index height, Index width, Index window, Index shift, PartitionKind kind, Index frames = 1);

/// Region id, in the rolled frame, of the pre-shift block each pixel came from.
/// Pixels sharing an id inside one window are contiguous in the original map.
std::vector<Index> shift_region_labels(Index height, Index width, Index window, Index shift);

/// Relative-position bias support: number of table rows for a partition kind
/// (sized by the configured window, which also covers any smaller effective window).
Index relative_table_rows(PartitionKind kind, Index window, Index frames);
/// Row index into that table for every (query, key) pair of one group, N * N
/// entries. `frames` is the actual T of the groups; it may not exceed table_frames.
std::vector<Index> relative_position_index(PartitionKind kind, Index effective_window, Index frames,
                                           Index table_window, Index table_frames);

}  // namespace vfit

#endif  // VFIT_WINDOWING_HPP_
