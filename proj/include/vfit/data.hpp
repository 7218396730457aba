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

// Septuplet datasets on disk, augmentation and the synthetic moving-shapes
// generator.
//
// A sequence is a directory holding im1.png ... im7.png (8-bit RGB). Frames
// 0, 2, 4 and 6 (zero-indexed) are the model inputs and frame 3 is the target.
// A manifest is a text file with one sequence directory per line, optionally
// followed by a TAB and a split tag; relative paths resolve against the
// manifest's directory. Blank lines and lines starting with '#' are ignored.

#ifndef VFIT_DATA_HPP_
#define VFIT_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vfit/synthesis.hpp"

namespace vfit {

inline constexpr std::array<Index, 4> kInputFrameIndices{0, 2, 4, 6};
inline constexpr Index kTargetFrameIndex = 3;
inline constexpr Index kSequenceLength = 7;

/// 8-bit RGB PNG to [3, H, W] in [0, 1]. Grey and alpha inputs are converted to RGB.
Tensor read_png(const std::filesystem::path& path);
/// [3, H, W] (or [1, H, W]) clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Tensor& image);

struct Sample {
  Tensor inputs;  // [4, 3, H, W]
  Tensor target;  // [3, H, W]
  std::string id;
};

/// Raises DataError unless frames share one size and every value lies in [0, 1].
void validate_sample(const Sample& sample);

struct SequenceEntry {
  std::filesystem::path directory;
  std::string split;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<SequenceEntry> sequences;
  std::string frame_pattern = "im{}.png";  // {} is replaced by 1..7

  std::filesystem::path frame_path(std::size_t sequence, Index frame) const;
  std::size_t size() const { return sequences.size(); }
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Reads all seven frames of one sequence directory.
Sample load_septuplet(const std::filesystem::path& directory, const std::string& frame_pattern = "im{}.png");
Sample load_sample(const DatasetManifest& manifest, std::size_t index);

struct AugmentConfig {
  Index crop_height = 64;  // 0 keeps the full frame
  Index crop_width = 64;
  bool horizontal_flip = true;
  bool vertical_flip = true;
  bool temporal_reverse = true;
};

/// One random crop and one set of flips shared by all five frames; temporal
/// reversal reorders the inputs and keeps the target.
Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed);

Sample crop_sample(const Sample& sample, Index top, Index left, Index height, Index width);
Sample flip_horizontal(const Sample& sample);
Sample flip_vertical(const Sample& sample);
Sample reverse_time(const Sample& sample);

/// Scale pyramid of the four inputs; H and W must be divisible by 4.
ScalePyramid build_pyramid(const Sample& sample);

/// Deterministic permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

struct ShapeSpec {
  std::string kind = "square";  // "square" or "disc"
  double x = 0.0, y = 0.0;      // top-left corner of the bounding box at frame 0
  double size = 8.0;
  double vx = 0.0, vy = 0.0;    // pixels per frame
  std::array<double, 3> color{1.0, 1.0, 1.0};
};

struct SyntheticSpec {
  Index canvas_height = 64;
  Index canvas_width = 64;
  Index sequences = 4;
  Index shapes_per_sequence = 3;
  double max_speed = 3.0;
  double min_size = 8.0;
  double max_size = 20.0;
  std::uint64_t seed = 0;
  /// When non-empty, every sequence renders exactly these shapes on a plain background.
  std::vector<ShapeSpec> shapes;

  /// Raises ConfigError for unusable canvases, sizes or velocities.
  void validate() const;
};

/// Renders one seven-frame sequence in memory ([7][3, H, W]).
std::vector<Tensor> render_sequence(const SyntheticSpec& spec, Index sequence_index);

/// Writes seq_XXXX/im1..im7.png and manifest.txt under `out_dir`; returns the manifest.
DatasetManifest gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace vfit

#endif  // VFIT_DATA_HPP_
