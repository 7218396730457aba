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

#include "vfit/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vfit/nn.hpp"
#include "vfit/training.hpp"

namespace vfit {
namespace {

constexpr Index kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> g(kSsimWindow);
  double sum = 0.0;
  for (Index i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i - kSsimWindow / 2);
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

/// Valid-region separable Gaussian filter of an [H, W] plane.
std::vector<double> filter_valid(const std::vector<double>& img, Index H, Index W, const std::vector<double>& g) {
  const Index oh = H - kSsimWindow + 1, ow = W - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(H * ow));
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < ow; ++x) {
      double s = 0.0;
      for (Index k = 0; k < kSsimWindow; ++k) s += g[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y * W + x + k)];
      rows[static_cast<std::size_t>(y * ow + x)] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (Index y = 0; y < oh; ++y)
    for (Index x = 0; x < ow; ++x) {
      double s = 0.0;
      for (Index k = 0; k < kSsimWindow; ++k) s += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((y + k) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = s;
    }
  return out;
}

BlockKind block_for(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::Sts:
      return BlockKind::Sts;
    case AttentionMode::SepSts:
      return BlockKind::SepSts;
    case AttentionMode::GlobalPatch:
      return BlockKind::GlobalPatch;
  }
  return BlockKind::SepSts;
}

struct Rgb {
  unsigned char r, g, b;
};

}  // namespace

std::string Psnr::str() const {
  if (identical) return "identical";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", db);
  return buf;
}

Psnr psnr(const Tensor& pred, const Tensor& gt, double peak) {
  require_same_shape(pred, gt, "psnr");
  if (pred.numel() == 0) throw ShapeError("psnr of empty images");
  double mse = 0.0;
  for (Index i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - gt[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.numel());
  if (mse == 0.0) return Psnr{true, 0.0};
  return Psnr{false, 10.0 * std::log10(peak * peak / mse)};
}

Tensor to_luma(const Tensor& img) {
  if (img.rank() == 2) return img.reshaped({1, img.dim(0), img.dim(1)});
  if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1)) {
    throw ShapeError("expected an image [3, H, W], [1, H, W] or [H, W], got " + shape_str(img.shape()));
  }
  if (img.dim(0) == 1) return img;
  const Index H = img.dim(1), W = img.dim(2), n = H * W;
  Tensor out({1, H, W});
  for (Index i = 0; i < n; ++i) out[i] = kLumaR * img[i] + kLumaG * img[n + i] + kLumaB * img[2 * n + i];
  return out;
}

double ssim(const Tensor& pred, const Tensor& gt, double peak) {
  require_same_shape(pred, gt, "ssim");
  const Tensor a = to_luma(pred), b = to_luma(gt);
  const Index H = a.dim(1), W = a.dim(2);
  if (H < kSsimWindow || W < kSsimWindow) {
    throw ShapeError("ssim needs images of at least 11x11, got " + std::to_string(H) + "x" + std::to_string(W));
  }
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const auto g = gaussian_taps();
  std::vector<double> x(a.data(), a.data() + a.numel()), y(b.data(), b.data() + b.numel());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, H, W, g), my = filter_valid(y, H, W, g);
  const auto sxx = filter_valid(xx, H, W, g), syy = filter_valid(yy, H, W, g), sxy = filter_valid(xy, H, W, g);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

MeanMetrics summarize(const std::vector<SampleMetrics>& samples) {
  MeanMetrics m;
  double psum = 0.0, ssum = 0.0;
  for (const auto& s : samples) {
    ++m.count;
    ssum += s.ssim;
    if (s.psnr.identical) {
      ++m.identical;
    } else {
      psum += s.psnr.db;
    }
  }
  if (m.count > 0) m.ssim = ssum / static_cast<double>(m.count);
  if (m.count > m.identical) m.psnr_db = psum / static_cast<double>(m.count - m.identical);
  return m;
}

MetricReport make_report(std::vector<SampleMetrics> samples) {
  MetricReport r;
  r.samples = std::move(samples);
  r.mean = summarize(r.samples);
  std::map<std::string, std::vector<SampleMetrics>> groups;
  for (const auto& s : r.samples) {
    if (!s.split.empty()) groups[s.split].push_back(s);
  }
  for (const auto& [split, items] : groups) r.by_split[split] = summarize(items);
  return r;
}

MetricReport evaluate(const VfitModel& model, const DatasetManifest& manifest) {
  std::vector<SampleMetrics> out;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    Sample s = load_sample(manifest, i);
    validate_sample(s);
    if (s.inputs.dim(0) != model.config().frames) {
      throw ConfigError("checkpoint/config mismatch: model expects " + std::to_string(model.config().frames) +
                        " frames");
    }
    const Tensor pred = model.interpolate(s.inputs);
    out.push_back(SampleMetrics{s.id, manifest.sequences[i].split, psnr(pred, s.target), ssim(pred, s.target)});
  }
  return make_report(std::move(out));
}

MetricReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest) {
  auto model = load_model(checkpoint);
  return evaluate(*model, manifest);
}

void write_report_csv(const std::filesystem::path& path, const MetricReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write report " + path.string());
  os << "sample_id,psnr_db,ssim\n";
  char buf[64];
  for (const auto& s : report.samples) {
    std::snprintf(buf, sizeof(buf), "%.17g", s.ssim);
    os << s.id << ',' << s.psnr.str() << ',' << buf << '\n';
  }
}

std::vector<BenchRow> bench_attention(const BenchConfig& cfg) {
  std::vector<BenchRow> rows;
  std::mt19937_64 rng(cfg.seed);
  for (const BenchCase& c : cfg.cases) {
    for (AttentionMode mode : cfg.modes) {
      const Index tile = mode == AttentionMode::GlobalPatch ? cfg.patch : c.window;
      const CostReport analytic = attention_cost(c.frames, tile, c.height, c.width, mode);
      BlockSettings bs;
      bs.frames = c.frames;
      bs.window = c.window;
      bs.patch = cfg.patch;
      ParameterSet params;
      auto block = make_block(block_for(mode), params, "bench", cfg.channels, bs, rng);
      const Var x(random_uniform({cfg.channels, c.frames, c.height, c.width}, rng));
      nn::reset_attention_stats();
      block->forward(x, c.window, false);
      const nn::AttentionStats stats = nn::attention_stats();
      rows.push_back(BenchRow{c, mode, analytic.pair_count, stats.pairs, stats.score_entries});
    }
  }
  return rows;
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write benchmark table " + path.string());
  os << "T,M,H,W,mode,pairs_analytic,pairs_measured,score_mem\n";
  for (const auto& r : rows) {
    os << r.shape.frames << ',' << r.shape.window << ',' << r.shape.height << ',' << r.shape.width << ','
       << to_string(r.mode) << ',' << r.pairs_analytic << ',' << r.pairs_measured << ',' << r.score_memory << '\n';
  }
}

void write_bench_plot(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
  constexpr Index kW = 640, kH = 360, kMargin = 30;
  const std::array<Rgb, 3> palette{Rgb{214, 96, 77}, Rgb{67, 147, 195}, Rgb{120, 120, 120}};
  Tensor img({3, kH, kW}, 1.0);
  auto fill = [&](Index x0, Index y0, Index x1, Index y1, Rgb c) {
    for (Index y = std::max<Index>(0, y0); y < std::min(kH, y1); ++y)
      for (Index x = std::max<Index>(0, x0); x < std::min(kW, x1); ++x) {
        img.at(0, y, x) = c.r / 255.0;
        img.at(1, y, x) = c.g / 255.0;
        img.at(2, y, x) = c.b / 255.0;
      }
  };
  std::vector<std::vector<const BenchRow*>> groups;
  for (const auto& r : rows) {
    if (groups.empty() || groups.back().front()->shape.frames != r.shape.frames ||
        groups.back().front()->shape.window != r.shape.window || groups.back().front()->shape.height != r.shape.height ||
        groups.back().front()->shape.width != r.shape.width) {
      groups.emplace_back();
    }
    groups.back().push_back(&r);
  }
  double top = 1.0;
  for (const auto& r : rows) top = std::max(top, std::log10(1.0 + static_cast<double>(r.score_memory)));
  const Index plot_h = kH - 2 * kMargin;
  const Index group_w = groups.empty() ? 0 : (kW - 2 * kMargin) / static_cast<Index>(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Index bar_w = std::max<Index>(1, (group_w - 10) / static_cast<Index>(groups[gi].size()));
    for (std::size_t bi = 0; bi < groups[gi].size(); ++bi) {
      const BenchRow& r = *groups[gi][bi];
      const auto h = static_cast<Index>(plot_h * std::log10(1.0 + static_cast<double>(r.score_memory)) / top);
      const Index x0 = kMargin + static_cast<Index>(gi) * group_w + 5 + static_cast<Index>(bi) * bar_w;
      fill(x0, kH - kMargin - h, x0 + bar_w - 2, kH - kMargin, palette[static_cast<std::size_t>(r.mode) % 3]);
    }
  }
  fill(kMargin - 2, kMargin, kMargin, kH - kMargin, Rgb{0, 0, 0});
  fill(kMargin - 2, kH - kMargin, kW - kMargin, kH - kMargin + 2, Rgb{0, 0, 0});
  write_png(path, img);
}

}  // namespace vfit
