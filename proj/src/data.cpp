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

#include "vfit/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace vfit {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::string replace_braces(const std::string& pattern, Index value) {
  const auto pos = pattern.find("{}");
  if (pos == std::string::npos) throw ConfigError("frame pattern '" + pattern + "' has no {} placeholder");
  std::string out = pattern;
  out.replace(pos, 2, std::to_string(value));
  return out;
}

Tensor frame_slice(const Tensor& frames, Index t) {
  const Index C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  Tensor out({C, H, W});
  std::copy_n(frames.data() + t * C * H * W, C * H * W, out.data());
  return out;
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
  const Shape& s = frames.front().shape();
  Shape shape{static_cast<Index>(frames.size())};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  const Index n = frames.front().numel();
  for (std::size_t t = 0; t < frames.size(); ++t) std::copy_n(frames[t].data(), n, out.data() + t * n);
  return out;
}

/// Applies `fn(y, x) -> (src_y, src_x)` to the trailing two axes.
template <typename Fn>
Tensor remap(const Tensor& x, Index out_h, Index out_w, Fn fn) {
  const Index H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
  const Index batch = x.numel() / (H * W);
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  Tensor out(shape);
  for (Index b = 0; b < batch; ++b)
    for (Index y = 0; y < out_h; ++y)
      for (Index xx = 0; xx < out_w; ++xx) {
        const auto [sy, sx] = fn(y, xx);
        out[(b * out_h + y) * out_w + xx] = x[(b * H + sy) * W + sx];
      }
  return out;
}

double interval_overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

double coverage(const ShapeSpec& s, double x0, double y0, Index py, Index px) {
  if (s.kind == "square") {
    return interval_overlap(x0, x0 + s.size, static_cast<double>(px), px + 1.0) *
           interval_overlap(y0, y0 + s.size, static_cast<double>(py), py + 1.0);
  }
  constexpr int kSub = 8;
  const double r = s.size / 2.0, cx = x0 + r, cy = y0 + r;
  if (px + 1.0 < cx - r || px > cx + r || py + 1.0 < cy - r || py > cy + r) return 0.0;
  int inside = 0;
  for (int i = 0; i < kSub; ++i)
    for (int j = 0; j < kSub; ++j) {
      const double sx = px + (j + 0.5) / kSub - cx, sy = py + (i + 0.5) / kSub - cy;
      if (sx * sx + sy * sy <= r * r) ++inside;
    }
  return static_cast<double>(inside) / (kSub * kSub);
}

}  // namespace

Tensor read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  const Index H = image.height, W = image.width;
  Tensor out({3, H, W});
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) out[(c * H + y) * W + x] = buffer[static_cast<std::size_t>((y * W + x) * 3 + c)] / 255.0;
  return out;
}

void write_png(const fs::path& path, const Tensor& img) {
  if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1)) {
    throw ShapeError("write_png expects [3, H, W] or [1, H, W], got " + shape_str(img.shape()));
  }
  const Index C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<png_byte> buffer(static_cast<std::size_t>(H * W * C));
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < C; ++c) {
        const double v = std::clamp(img[(c * H + y) * W + x], 0.0, 1.0);
        buffer[static_cast<std::size_t>((y * W + x) * C + c)] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(W);
  image.height = static_cast<png_uint_32>(H);
  image.format = C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

void validate_sample(const Sample& s) {
  if (s.inputs.rank() != 4 || s.inputs.dim(0) != 4 || s.inputs.dim(1) != 3) {
    throw DataError("sample " + s.id + ": inputs must be [4, 3, H, W], got " + shape_str(s.inputs.shape()));
  }
  if (s.target.shape() != Shape{3, s.inputs.dim(2), s.inputs.dim(3)}) {
    throw DataError("sample " + s.id + ": target " + shape_str(s.target.shape()) + " does not match inputs " +
                    shape_str(s.inputs.shape()));
  }
  for (const Tensor* t : {&s.inputs, &s.target}) {
    for (double v : t->values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("sample " + s.id + ": pixel value outside [0, 1]");
    }
  }
}

fs::path DatasetManifest::frame_path(std::size_t sequence, Index frame) const {
  return sequences.at(sequence).directory / replace_braces(frame_pattern, frame + 1);
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    SequenceEntry e;
    const auto tab = line.find('\t');
    fs::path dir = line.substr(0, tab);
    if (tab != std::string::npos) e.split = line.substr(tab + 1);
    e.directory = dir.is_absolute() ? dir : m.root / dir;
    m.sequences.push_back(std::move(e));
  }
  if (m.sequences.empty()) throw DataError("manifest " + path.string() + " lists no sequences");
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path();
  for (const auto& e : m.sequences) {
    const fs::path rel = base.empty() ? e.directory : e.directory.lexically_relative(base);
    os << (rel.empty() ? e.directory : rel).generic_string();
    if (!e.split.empty()) os << '\t' << e.split;
    os << '\n';
  }
}

Sample load_septuplet(const fs::path& dir, const std::string& pattern) {
  std::vector<Tensor> frames;
  for (Index f = 0; f < kSequenceLength; ++f) {
    const fs::path p = dir / replace_braces(pattern, f + 1);
    if (!fs::exists(p)) throw DataError("missing frame " + p.string());
    frames.push_back(read_png(p));
    if (frames.back().shape() != frames.front().shape()) {
      throw DataError("frame " + p.string() + " is " + shape_str(frames.back().shape()) + " but " +
                      (dir / replace_braces(pattern, 1)).string() + " is " + shape_str(frames.front().shape()));
    }
  }
  Sample s;
  std::vector<Tensor> inputs;
  for (Index i : kInputFrameIndices) inputs.push_back(frames[static_cast<std::size_t>(i)]);
  s.inputs = stack_frames(inputs);
  s.target = frames[kTargetFrameIndex];
  s.id = dir.filename().string();
  if (s.id.empty()) s.id = dir.parent_path().filename().string();
  return s;
}

Sample load_sample(const DatasetManifest& m, std::size_t index) {
  return load_septuplet(m.sequences.at(index).directory, m.frame_pattern);
}

Sample crop_sample(const Sample& s, Index top, Index left, Index height, Index width) {
  const Index H = s.target.dim(1), W = s.target.dim(2);
  if (height > H || width > W) {
    throw DataError("crop " + std::to_string(height) + "x" + std::to_string(width) + " is larger than the " +
                    std::to_string(H) + "x" + std::to_string(W) + " frame of " + s.id);
  }
  if (top < 0 || left < 0 || top + height > H || left + width > W) throw DataError("crop window outside frame");
  auto fn = [&](Index y, Index x) { return std::pair<Index, Index>{y + top, x + left}; };
  return Sample{remap(s.inputs, height, width, fn), remap(s.target, height, width, fn), s.id};
}

Sample flip_horizontal(const Sample& s) {
  const Index H = s.target.dim(1), W = s.target.dim(2);
  auto fn = [&](Index y, Index x) { return std::pair<Index, Index>{y, W - 1 - x}; };
  return Sample{remap(s.inputs, H, W, fn), remap(s.target, H, W, fn), s.id};
}

Sample flip_vertical(const Sample& s) {
  const Index H = s.target.dim(1), W = s.target.dim(2);
  auto fn = [&](Index y, Index x) { return std::pair<Index, Index>{H - 1 - y, x}; };
  return Sample{remap(s.inputs, H, W, fn), remap(s.target, H, W, fn), s.id};
}

Sample reverse_time(const Sample& s) {
  const Index T = s.inputs.dim(0);
  std::vector<Tensor> frames;
  for (Index t = T; t-- > 0;) frames.push_back(frame_slice(s.inputs, t));
  return Sample{stack_frames(frames), s.target, s.id};
}

Sample augment(const Sample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Index H = sample.target.dim(1), W = sample.target.dim(2);
  const Index ch = cfg.crop_height > 0 ? cfg.crop_height : H;
  const Index cw = cfg.crop_width > 0 ? cfg.crop_width : W;
  if (ch > H || cw > W) {
    throw DataError("crop " + std::to_string(ch) + "x" + std::to_string(cw) + " is larger than the " +
                    std::to_string(H) + "x" + std::to_string(W) + " frame of " + sample.id);
  }
  const Index top = std::uniform_int_distribution<Index>(0, H - ch)(rng);
  const Index left = std::uniform_int_distribution<Index>(0, W - cw)(rng);
  std::bernoulli_distribution coin(0.5);
  const bool hflip = coin(rng), vflip = coin(rng), reverse = coin(rng);
  Sample out = crop_sample(sample, top, left, ch, cw);
  if (cfg.horizontal_flip && hflip) out = flip_horizontal(out);
  if (cfg.vertical_flip && vflip) out = flip_vertical(out);
  if (cfg.temporal_reverse && reverse) out = reverse_time(out);
  return out;
}

ScalePyramid build_pyramid(const Sample& sample) { return build_scale_pyramid(sample.inputs, 3); }

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (kGolden * (epoch + 1)));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void SyntheticSpec::validate() const {
  if (canvas_height < 16 || canvas_width < 16) throw ConfigError("synthetic canvas must be at least 16x16");
  if (sequences < 1) throw ConfigError("synthetic.sequences must be >= 1");
  const double limit = static_cast<double>(std::min(canvas_height, canvas_width));
  auto check_velocity = [&](double vx, double vy) {
    if (6.0 * std::abs(vx) >= static_cast<double>(canvas_width) ||
        6.0 * std::abs(vy) >= static_cast<double>(canvas_height)) {
      throw ConfigError("synthetic velocity (" + std::to_string(vx) + ", " + std::to_string(vy) +
                        ") moves a shape across the whole canvas within one sequence");
    }
  };
  if (shapes.empty()) {
    if (shapes_per_sequence < 1) throw ConfigError("synthetic.shapes_per_sequence must be >= 1");
    if (max_speed < 0.0) throw ConfigError("synthetic.max_speed must be >= 0");
    check_velocity(max_speed, max_speed);
    if (min_size <= 0.0 || max_size < min_size || max_size >= limit) {
      throw ConfigError("synthetic shape sizes must satisfy 0 < min_size <= max_size < canvas");
    }
  }
  for (const ShapeSpec& s : shapes) {
    if (s.kind != "square" && s.kind != "disc") throw ConfigError("unknown synthetic shape kind '" + s.kind + "'");
    if (s.size <= 0.0) throw ConfigError("synthetic shape size must be positive");
    for (double c : s.color) {
      if (c < 0.0 || c > 1.0) throw ConfigError("synthetic shape colour must lie in [0, 1]");
    }
    check_velocity(s.vx, s.vy);
  }
}

std::vector<Tensor> render_sequence(const SyntheticSpec& spec, Index sequence_index) {
  spec.validate();
  const Index H = spec.canvas_height, W = spec.canvas_width;
  std::mt19937_64 rng(spec.seed ^ (kGolden * static_cast<std::uint64_t>(sequence_index + 1)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::array<double, 3> base{0.0, 0.0, 0.0};
  std::array<double, 2> gradient{0.0, 0.0};
  std::vector<ShapeSpec> shapes = spec.shapes;
  if (shapes.empty()) {
    for (double& c : base) c = 0.1 + 0.3 * unit(rng);
    gradient = {0.3 * unit(rng) - 0.15, 0.3 * unit(rng) - 0.15};
    for (Index i = 0; i < spec.shapes_per_sequence; ++i) {
      ShapeSpec s;
      s.kind = unit(rng) < 0.5 ? "square" : "disc";
      s.size = spec.min_size + (spec.max_size - spec.min_size) * unit(rng);
      s.vx = spec.max_speed * (2.0 * unit(rng) - 1.0);
      s.vy = spec.max_speed * (2.0 * unit(rng) - 1.0);
      const double mid_x = (W - s.size) * unit(rng), mid_y = (H - s.size) * unit(rng);
      s.x = mid_x - kTargetFrameIndex * s.vx;
      s.y = mid_y - kTargetFrameIndex * s.vy;
      for (double& c : s.color) c = 0.3 + 0.7 * unit(rng);
      shapes.push_back(s);
    }
  }

  std::vector<Tensor> frames;
  for (Index f = 0; f < kSequenceLength; ++f) {
    Tensor img({3, H, W});
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double g = gradient[0] * x / W + gradient[1] * y / H;
        for (Index c = 0; c < 3; ++c) img[(c * H + y) * W + x] = std::clamp(base[c] + g, 0.0, 1.0);
      }
    for (const ShapeSpec& s : shapes) {
      const double x0 = s.x + s.vx * f, y0 = s.y + s.vy * f;
      const Index ylo = std::max<Index>(0, static_cast<Index>(std::floor(y0)));
      const Index yhi = std::min<Index>(H, static_cast<Index>(std::ceil(y0 + s.size)) + 1);
      const Index xlo = std::max<Index>(0, static_cast<Index>(std::floor(x0)));
      const Index xhi = std::min<Index>(W, static_cast<Index>(std::ceil(x0 + s.size)) + 1);
      for (Index y = ylo; y < yhi; ++y)
        for (Index x = xlo; x < xhi; ++x) {
          const double a = coverage(s, x0, y0, y, x);
          if (a <= 0.0) continue;
          for (Index c = 0; c < 3; ++c) {
            double& v = img[(c * H + y) * W + x];
            v = v * (1.0 - a) + s.color[static_cast<std::size_t>(c)] * a;
          }
        }
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

DatasetManifest gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  DatasetManifest m;
  m.root = out_dir;
  for (Index i = 0; i < spec.sequences; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04lld", static_cast<long long>(i));
    const fs::path dir = out_dir / name;
    const std::vector<Tensor> frames = render_sequence(spec, i);
    for (Index f = 0; f < kSequenceLength; ++f) {
      write_png(dir / replace_braces(m.frame_pattern, f + 1), frames[static_cast<std::size_t>(f)]);
    }
    m.sequences.push_back(SequenceEntry{dir, ""});
  }
  save_manifest(out_dir / "manifest.txt", m);
  return m;
}

}  // namespace vfit
