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

#ifndef VFIT_EVALBENCH_HPP_
#define VFIT_EVALBENCH_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vfit/attention.hpp"
#include "vfit/data.hpp"
#include "vfit/model.hpp"

namespace vfit {

/// PSNR in dB, or the identical-pair marker when the images match exactly.
struct Psnr {
  bool identical = false;
  double db = 0.0;  // meaningful only when !identical

  std::string str() const;
};

Psnr psnr(const Tensor& pred, const Tensor& gt, double peak = 1.0);

/// Luma weights used to reduce RGB to one channel before SSIM.
inline constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;
Tensor to_luma(const Tensor& image);

/// Mean SSIM over every valid 11x11 Gaussian window (sigma 1.5) of the luma
/// channel, stabilisers (0.01 peak)^2 and (0.03 peak)^2. Accepts [3, H, W],
/// [1, H, W] or [H, W].
double ssim(const Tensor& pred, const Tensor& gt, double peak = 1.0);

struct SampleMetrics {
  std::string id;
  std::string split;
  Psnr psnr;
  double ssim = 0.0;
};

struct MeanMetrics {
  double psnr_db = 0.0;   // over non-identical pairs
  double ssim = 0.0;      // over all pairs
  Index count = 0;
  Index identical = 0;    // pairs excluded from psnr_db
};

struct MetricReport {
  std::vector<SampleMetrics> samples;
  MeanMetrics mean;
  std::map<std::string, MeanMetrics> by_split;  // only tagged sequences

  Index sample_count() const { return static_cast<Index>(samples.size()); }
};

MeanMetrics summarize(const std::vector<SampleMetrics>& samples);
MetricReport make_report(std::vector<SampleMetrics> samples);

/// Runs the model on every manifest sequence (full frames, no augmentation).
MetricReport evaluate(const VfitModel& model, const DatasetManifest& manifest);
/// Loads the checkpoint's own configuration and weights first.
MetricReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest);

/// CSV: sample_id,psnr_db,ssim (identical pairs print "identical").
void write_report_csv(const std::filesystem::path& path, const MetricReport& report);

struct BenchCase {
  Index frames = 4, window = 8, height = 8, width = 8;
};

struct BenchConfig {
  std::vector<BenchCase> cases{{4, 8, 8, 8}, {4, 8, 16, 16}, {4, 4, 16, 16}, {2, 4, 8, 8}, {1, 8, 16, 16}};
  std::vector<AttentionMode> modes{AttentionMode::Sts, AttentionMode::SepSts, AttentionMode::GlobalPatch};
  Index patch = 4;
  Index channels = 32;
  std::uint64_t seed = 0;
};

struct BenchRow {
  BenchCase shape;
  AttentionMode mode = AttentionMode::SepSts;
  Index pairs_analytic = 0;
  Index pairs_measured = 0;
  Index score_memory = 0;  // stored score entries counted during the run
};

/// Runs one instrumented block per (case, mode) on random input and compares
/// the counted query-key pairs with attention_cost.
std::vector<BenchRow> bench_attention(const BenchConfig& cfg);

/// CSV: T,M,H,W,mode,pairs_analytic,pairs_measured,score_mem
void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows);
/// Grouped bar chart of log10(score memory) per case, one colour per mode.
void write_bench_plot(const std::filesystem::path& path, const std::vector<BenchRow>& rows);

}  // namespace vfit

#endif  // VFIT_EVALBENCH_HPP_
