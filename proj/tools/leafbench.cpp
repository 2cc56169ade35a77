// SPDX-License-Identifier: Apache-2.0
// leafbench command line: one subcommand per pipeline stage, all driven by
// the same config file.
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "leafbench/bench.hpp"
#include "leafbench/dataset.hpp"
#include "leafbench/error.hpp"
#include "leafbench/lpips.hpp"

namespace lb = leafbench;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

lb::BenchConfig base_config(const Globals& g) {
  lb::BenchConfig c = g.config.empty() ? lb::BenchConfig{} : lb::load_bench_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.out_dir = g.out;
  return c;
}

fs::path out_dir(const Globals& g, const char* fallback) { return g.out.empty() ? fs::path(fallback) : fs::path(g.out); }

void set_backend(lb::BenchConfig& c, const std::string& spec) {
  if (spec.empty()) return;
  const auto parsed = lb::parse_bench_config("[telemetry]\nbackend = " + spec + "\n");
  c.backend = parsed.backend;
  c.backend_trace = parsed.backend_trace;
}

int report_outcome(const lb::BenchReport& report, const lb::BenchConfig& c) {
  std::cout << lb::render_report(report).text;
  std::cout << fmt::format("artifacts in {}\n", c.out_dir.string());
  if (!report.complete) {
    std::cerr << "workload failed: " << report.failure << "\n";
    return lb::kExitWorkloadFailure;
  }
  return lb::kExitSuccess;
}

lb::DatasetManifest manifest_or_directory(const fs::path& p) {
  if (fs::is_regular_file(p)) return lb::read_manifest(p);
  if (fs::exists(p / lb::kManifestFileName)) return lb::read_manifest(p / lb::kManifestFileName);
  lb::DatasetManifest m;
  m.base_dir = p;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(p)) {
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".PNG" || ext == ".JPG") {
      files.push_back(e.path().filename());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) m.entries.push_back({f.string(), "", lb::ImageSource::field, lb::View::canopy, 0, 0});
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leafbench: desk-scale diffusion training, telemetry and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "bench config file (sectioned key = value)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "ingest images into a fixed-size manifest, or lint manifests");
  std::string source, class_label = "anthracnose", view = "canopy", crop;
  int size = 1024, synthetic = 0;
  std::vector<std::string> lint;
  prepare->add_option("--source", source, "directory of PNG/JPEG images")->check(CLI::ExistingDirectory);
  prepare->add_option("--class", class_label, "class label for every image");
  prepare->add_option("--view", view, "canopy, close_up, under_leaf or aerial");
  prepare->add_option("--size", size, "square target size")->check(CLI::PositiveNumber);
  prepare->add_option("--crop", crop, "crop species tag");
  prepare->add_option("--synthetic", synthetic, "write this many procedural leaves instead")->check(CLI::PositiveNumber);
  prepare->add_option("--lint", lint, "manifests to check as one training set")->check(CLI::ExistingFile);

  // train / generate / bench share the config
  auto* train = app.add_subcommand("train", "train the toy denoiser under telemetry");
  auto* generate = app.add_subcommand("generate", "sample images under telemetry");
  std::string checkpoint;
  long images = -1;
  generate->add_option("--checkpoint", checkpoint, "trained model")->check(CLI::ExistingFile);
  generate->add_option("--images", images, "number of images")->check(CLI::NonNegativeNumber);
  auto* bench = app.add_subcommand("bench", "run every configured phase, evaluate and report");
  std::string backend;
  for (auto* sub : {train, generate, bench}) {
    sub->add_option("--backend", backend, "real, synthetic or synthetic:<trace.csv>");
  }

  // monitor
  auto* monitor = app.add_subcommand("monitor", "record telemetry around a command or for a fixed duration");
  double duration = 0;
  std::string phase = "inference", label = "monitor";
  std::vector<std::string> command;
  monitor->add_option("--duration", duration, "seconds to sample when no command is given");
  monitor->add_option("--phase", phase, "training or inference");
  monitor->add_option("--label", label, "run label");
  monitor->add_option("--backend", backend, "real (default), synthetic or synthetic:<trace.csv>");
  monitor->add_option("command", command, "command to wrap (after --)");

  // eval
  auto* eval = app.add_subcommand("eval", "perceptual distance of a synthetic set to a real set");
  std::string real, synth;
  std::uint64_t extractor_seed = lb::kDefaultExtractorSeed;
  int eval_size = 32;
  eval->add_option("--real", real, "real manifest or directory")->required();
  eval->add_option("--synthetic", synth, "synthetic manifest or directory")->required();
  eval->add_option("--size", eval_size, "square comparison size")->check(CLI::PositiveNumber);
  eval->add_option("--extractor-seed", extractor_seed, "feature extractor seed");

  // report
  auto* report = app.add_subcommand("report", "combine run directories into one comparison report");
  std::vector<std::string> runs;
  std::string baseline;
  double interval = 1.0;
  report->add_option("--run", runs, "run directory (repeatable)");
  report->add_option("--baseline", baseline, "label the ratios divide by");
  report->add_option("--interval", interval, "sample interval of the traces");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? lb::kExitSuccess : lb::kExitUsage;
  }

  try {
    if (prepare->parsed()) {
      if (!lint.empty()) {
        std::vector<lb::DatasetManifest> ms;
        for (const auto& p : lint) ms.push_back(lb::read_manifest(p));
        const auto violations = lb::lint_manifests(ms);
        for (const auto& v : violations) std::cout << lb::to_string(v.kind) << ": " << v.message << "\n";
        if (violations.empty()) std::cout << "ok\n";
        return violations.empty() ? lb::kExitSuccess : lb::kExitUsage;
      }
      const fs::path out = out_dir(g, "dataset");
      if (synthetic > 0) {
        const auto m = lb::write_synthetic_dataset(out, synthetic, size, size, g.seed.value_or(0), class_label);
        std::cout << fmt::format("wrote {} images to {}\n", m.entries.size(), out.string());
        return lb::kExitSuccess;
      }
      if (source.empty()) throw CLI::ValidationError("prepare needs --source, --synthetic or --lint");
      lb::IngestOptions opts;
      opts.class_label = class_label;
      const auto v = lb::parse_view(view);
      if (!v) throw CLI::ValidationError(fmt::format("unknown view '{}'", view));
      opts.view = *v;
      opts.target_width = opts.target_height = size;
      opts.crop = crop;
      const auto result = lb::ingest(source, out, opts);
      for (const auto& f : result.failures) std::cerr << "skipped " << f.path.string() << ": " << f.reason << "\n";
      std::cout << fmt::format("wrote {} images to {}\n", result.manifest.entries.size(), out.string());
      return lb::kExitSuccess;
    }

    if (train->parsed() || generate->parsed() || bench->parsed()) {
      auto c = base_config(g);
      set_backend(c, backend);
      if (train->parsed()) c.phases = {lb::WorkloadPhase::training};
      if (generate->parsed()) {
        c.phases = {lb::WorkloadPhase::inference};
        if (!checkpoint.empty()) c.checkpoint = checkpoint;
        if (images >= 0) c.images_to_generate = images;
      }
      return report_outcome(lb::run_bench(c), c);
    }

    if (monitor->parsed()) {
      auto c = base_config(g);
      if (g.out.empty()) c.out_dir = "monitor-out";
      set_backend(c, backend.empty() ? "real" : backend);
      const auto p = lb::parse_phase(phase);
      if (!p) throw CLI::ValidationError(fmt::format("unknown phase '{}'", phase));
      c.label = label;
      c.phases = {*p};
      c.workload = lb::WorkloadKind::external;
      c.clock = lb::ClockKind::wall;
      if (!command.empty()) {
        std::string joined;
        for (const auto& part : command) {
          if (!joined.empty()) joined += ' ';
          joined += "'" + part + "'";
        }
        c.command = joined;
      } else if (duration > 0) {
        c.command = fmt::format("sleep {}", duration);
      } else {
        throw CLI::ValidationError("monitor needs a command or --duration");
      }
      return report_outcome(lb::run_bench(c), c);
    }

    if (eval->parsed()) {
      const auto extractor = lb::FeatureExtractor::seeded(extractor_seed, 3, eval_size, eval_size);
      const auto r = manifest_or_directory(real);
      const auto s = manifest_or_directory(synth);
      const auto score = lb::corpus_score(extractor, r, s);
      std::vector<std::string> rn, sn;
      for (const auto& e : r.entries) rn.push_back(e.path);
      for (const auto& e : s.entries) sn.push_back(e.path);
      const fs::path out = out_dir(g, ".");
      fs::create_directories(out);
      std::ofstream(out / "lpips_pairs.csv", std::ios::binary) << lb::pair_scores_to_csv(score, sn, rn);
      std::cout << fmt::format("LPIPS {} over {} images\n", lb::format_score(score.mean), s.entries.size());
      return lb::kExitSuccess;
    }

    if (report->parsed()) {
      lb::BenchReport combined;
      for (const auto& dir : runs) {
        auto one = lb::load_run_directory(dir, interval);
        for (auto& r : one.runs) combined.runs.push_back(std::move(r));
        if (!one.complete) {
          combined.complete = false;
          combined.failure = one.failure;
        }
      }
      if (!baseline.empty()) lb::attach_ratios(combined, baseline);
      const fs::path out = out_dir(g, "report-out");
      lb::write_report(combined, out);
      std::cout << lb::render_report(combined).text;
      return lb::kExitSuccess;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lb::kExitUsage;
  } catch (const lb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == lb::Errc::backend_unavailable ? lb::kExitBackendUnavailable : lb::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lb::kExitUsage;
  }
  return lb::kExitUsage;
}
