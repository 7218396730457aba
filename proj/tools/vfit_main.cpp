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

// vfit command-line entry point.
//
//   vfit gen-data    [--config c.json] [--set k=v ...] [--out dir]
//   vfit train       [--config c.json] [--manifest m.txt] [--resume ckpt] [--out dir]
//   vfit interpolate [--config c.json] --checkpoint ckpt --frames dir|manifest [--out dir]
//   vfit eval        [--config c.json] --checkpoint ckpt [--manifest m.txt] [--out dir]
//   vfit bench       [--config c.json] [--out dir]
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// abort, 1 anything else. Every run writes resolved_config.json into its
// output directory; `--config resolved_config.json` replays it.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "vfit/config.hpp"

namespace fs = std::filesystem;
using namespace vfit;

namespace {

struct Invocation {
  std::string subcommand;
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

fs::path output_dir(const Invocation& inv) {
  const char* root = std::getenv("VFIT_OUTPUT_ROOT");
  const fs::path base = (root != nullptr && *root != '\0') ? fs::path(root) : fs::path("runs");
  if (inv.out.empty()) return base / inv.subcommand;
  const fs::path out(inv.out);
  return (out.is_relative() && root != nullptr && *root != '\0') ? base / out : out;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("no ") + what + " given");
  if (!fs::exists(path)) throw DataError(std::string(what) + " not found: " + path);
}

void snapshot(const fs::path& out, const Invocation& inv, const RunConfig& cfg) {
  Json j = to_json(cfg);
  write_json_file(out / "resolved_config.json", j);
  std::fprintf(stderr, "[vfit %s] output: %s\n", inv.subcommand.c_str(), out.string().c_str());
}

/// Sequence directories named by --frames: one sequence, a manifest or a directory of sequences.
DatasetManifest frames_manifest(const std::string& frames) {
  const fs::path p(frames);
  if (!fs::exists(p)) throw DataError("frames input not found: " + frames);
  if (fs::is_regular_file(p)) return load_manifest(p);
  DatasetManifest m;
  m.root = p;
  if (fs::exists(p / "im1.png")) {
    m.sequences.push_back({p, ""});
    return m;
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(p)) {
    if (e.is_directory() && fs::exists(e.path() / "im1.png")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) m.sequences.push_back({d, ""});
  if (m.sequences.empty()) throw DataError("no sequences (im1.png ...) under " + frames);
  return m;
}

/// Four input frames of one sequence: im1..im7 (inputs 1,3,5,7) or just im1..im4.
Tensor load_inputs(const fs::path& dir, Sample* full) {
  if (fs::exists(dir / "im7.png")) {
    *full = load_septuplet(dir);
    return full->inputs;
  }
  Tensor out;
  for (Index f = 0; f < 4; ++f) {
    const fs::path p = dir / ("im" + std::to_string(f + 1) + ".png");
    if (!fs::exists(p)) throw DataError("missing frame " + p.string());
    const Tensor img = read_png(p);
    if (f == 0) out = Tensor({4, 3, img.dim(1), img.dim(2)});
    if (img.shape() != Shape{3, out.dim(2), out.dim(3)}) throw DataError("frame " + p.string() + " has a different size");
    std::copy_n(img.data(), img.numel(), out.data() + f * img.numel());
  }
  full->id.clear();
  return out;
}

int run_gen_data(const Invocation& inv, const RunConfig& cfg) {
  const fs::path out = output_dir(inv);
  fs::create_directories(out);
  snapshot(out, inv, cfg);
  const DatasetManifest m = gen_synthetic(cfg.synthetic, out);
  std::printf("wrote %zu sequences, manifest %s\n", m.size(), (out / "manifest.txt").string().c_str());
  return 0;
}

int run_train(const Invocation& inv, const RunConfig& cfg) {
  require_file(cfg.data.manifest, "training manifest (data.manifest / --manifest)");
  if (!cfg.data.resume.empty()) require_file(cfg.data.resume, "resume checkpoint");
  const DatasetManifest manifest = load_manifest(cfg.data.manifest);
  const fs::path out = output_dir(inv);
  fs::create_directories(out);
  snapshot(out, inv, cfg);
  FitOptions opt;
  opt.out_dir = out;
  opt.model_seed = cfg.train.seed;
  if (!cfg.data.resume.empty()) opt.resume = fs::path(cfg.data.resume);
  opt.on_step = [](Index step, const StepResult& r) {
    if (step % 10 == 0) std::fprintf(stderr, "step %lld  lr %.3e  loss %.6f\n", static_cast<long long>(step), r.lr, r.loss);
    return true;
  };
  const FitResult r = fit(cfg.model, cfg.train, manifest, opt);
  std::printf("trained %lld steps, final loss %.6f, checkpoint %s\n", static_cast<long long>(r.steps), r.last_loss,
              r.checkpoint.string().c_str());
  return 0;
}

int run_interpolate(const Invocation& inv, const RunConfig& cfg) {
  require_file(cfg.data.checkpoint, "checkpoint (data.checkpoint / --checkpoint)");
  if (cfg.data.frames.empty()) throw ConfigError("no frames input given (data.frames / --frames)");
  const DatasetManifest m = frames_manifest(cfg.data.frames);
  auto model = load_model(cfg.data.checkpoint);
  const fs::path out = output_dir(inv);
  fs::create_directories(out);
  snapshot(out, inv, cfg);
  for (const auto& seq : m.sequences) {
    Sample full;
    const Tensor inputs = load_inputs(seq.directory, &full);
    const Tensor pred = model->interpolate(inputs);
    const fs::path target = m.sequences.size() == 1 ? out / "pred_0.5.png"
                                                    : out / seq.directory.filename() / "pred_0.5.png";
    write_png(target, pred);
    std::printf("%s\n", target.string().c_str());
  }
  return 0;
}

int run_eval(const Invocation& inv, const RunConfig& cfg) {
  require_file(cfg.data.checkpoint, "checkpoint (data.checkpoint / --checkpoint)");
  const std::string manifest_path = cfg.data.eval_manifest.empty() ? cfg.data.manifest : cfg.data.eval_manifest;
  require_file(manifest_path, "evaluation manifest (data.eval_manifest / --manifest)");
  const DatasetManifest manifest = load_manifest(manifest_path);
  const MetricReport report = evaluate(fs::path(cfg.data.checkpoint), manifest);
  const fs::path out = output_dir(inv);
  fs::create_directories(out);
  snapshot(out, inv, cfg);
  write_report_csv(out / "metrics.csv", report);
  auto mean_json = [](const MeanMetrics& m) {
    return Json{{"psnr_db", m.psnr_db}, {"ssim", m.ssim}, {"count", m.count}, {"identical", m.identical}};
  };
  Json summary{{"mean", mean_json(report.mean)}, {"by_split", Json::object()}};
  for (const auto& [split, m] : report.by_split) summary["by_split"][split] = mean_json(m);
  write_json_file(out / "metrics_summary.json", summary);
  std::printf("samples %lld  mean PSNR %.4f dB (%lld identical excluded)  mean SSIM %.6f\n",
              static_cast<long long>(report.mean.count), report.mean.psnr_db,
              static_cast<long long>(report.mean.identical), report.mean.ssim);
  return 0;
}

int run_bench(const Invocation& inv, const RunConfig& cfg) {
  for (const BenchCase& c : cfg.bench.cases) {
    for (AttentionMode mode : cfg.bench.modes) {
      attention_cost(c.frames, mode == AttentionMode::GlobalPatch ? cfg.bench.patch : c.window, c.height, c.width,
                     mode);
    }
  }
  const fs::path out = output_dir(inv);
  fs::create_directories(out);
  snapshot(out, inv, cfg);
  const auto rows = bench_attention(cfg.bench);
  write_bench_csv(out / "bench.csv", rows);
  write_bench_plot(out / "bench.png", rows);
  std::printf("%-4s %-4s %-5s %-5s %-12s %14s %14s %14s\n", "T", "M", "H", "W", "mode", "pairs", "measured", "score_mem");
  for (const auto& r : rows) {
    std::printf("%-4lld %-4lld %-5lld %-5lld %-12s %14lld %14lld %14lld\n", static_cast<long long>(r.shape.frames),
                static_cast<long long>(r.shape.window), static_cast<long long>(r.shape.height),
                static_cast<long long>(r.shape.width), to_string(r.mode), static_cast<long long>(r.pairs_analytic),
                static_cast<long long>(r.pairs_measured), static_cast<long long>(r.score_memory));
  }
  return 0;
}

int dispatch(const Invocation& inv, std::vector<std::string> overrides) {
  const RunConfig cfg = resolve_run_config(inv.config, overrides);
  if (inv.subcommand == "gen-data") return run_gen_data(inv, cfg);
  if (inv.subcommand == "train") return run_train(inv, cfg);
  if (inv.subcommand == "interpolate") return run_interpolate(inv, cfg);
  if (inv.subcommand == "eval") return run_eval(inv, cfg);
  return run_bench(inv, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VFIT: video frame interpolation transformer"};
  app.require_subcommand(1);
  Invocation inv;
  std::string manifest, checkpoint, frames, resume;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--set", inv.overrides, "Override a config key (dotted.key=value), repeatable");
    sub->add_option("--out", inv.out, "Output directory (relative paths land under $VFIT_OUTPUT_ROOT when set)");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "Render the synthetic moving-shapes dataset");
  common(gen);
  CLI::App* train = app.add_subcommand("train", "Train a model on a manifest");
  common(train);
  train->add_option("--manifest", manifest, "Training manifest (data.manifest)");
  train->add_option("--resume", resume, "Checkpoint to resume from (data.resume)");
  CLI::App* interp = app.add_subcommand("interpolate", "Synthesize the middle frame of each sequence");
  common(interp);
  interp->add_option("--checkpoint", checkpoint, "Model checkpoint (data.checkpoint)");
  interp->add_option("--frames", frames, "Sequence directory, directory of sequences or manifest (data.frames)");
  CLI::App* eval = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint on a manifest");
  common(eval);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint (data.checkpoint)");
  eval->add_option("--manifest", manifest, "Evaluation manifest (data.eval_manifest)");
  CLI::App* bench = app.add_subcommand("bench", "Attention pair-count and score-memory benchmark");
  common(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  inv.subcommand = app.get_subcommands().front()->get_name();

  std::vector<std::string> overrides = inv.overrides;
  if (!manifest.empty()) overrides.push_back((inv.subcommand == "eval" ? "data.eval_manifest=" : "data.manifest=") + Json(manifest).dump());
  if (!checkpoint.empty()) overrides.push_back("data.checkpoint=" + Json(checkpoint).dump());
  if (!frames.empty()) overrides.push_back("data.frames=" + Json(frames).dump());
  if (!resume.empty()) overrides.push_back("data.resume=" + Json(resume).dump());

  try {
    return dispatch(inv, overrides);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error[config]: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error[numeric]: %s\n", e.what());
    return 4;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error[data]: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error[data]: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
}
