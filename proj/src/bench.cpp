// SPDX-License-Identifier: Apache-2.0
#include "leafbench/bench.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "leafbench/checkpoint.hpp"
#include "leafbench/dataset.hpp"
#include "leafbench/diffusion.hpp"
#include "leafbench/error.hpp"
#include "leafbench/image_io.hpp"
#include "leafbench/prompt.hpp"

namespace leafbench {

namespace fs = std::filesystem;

namespace {

std::string now_utc() { return format_utc(std::chrono::system_clock::now()); }

std::shared_ptr<TelemetryBackend> make_backend(const BenchConfig& config) {
  if (config.backend == BackendKind::real) return std::make_shared<NvidiaSmiBackend>(config.gpu_index);
  if (!config.backend_trace.empty()) return ScriptedBackend::from_trace_file(config.backend_trace);
  return ScriptedBackend::constant(config.synthetic_reading);
}

/// One phase bracketed by the sampler. The clock is private to the phase so
/// every trace starts at elapsed 0.
class PhaseWindow {
 public:
  PhaseWindow(const BenchConfig& config, std::shared_ptr<TelemetryBackend> backend, WorkloadPhase phase)
      : config_(config), phase_(phase), path_(config.out_dir / trace_file_name(config.label, phase)) {
    std::shared_ptr<Clock> clock;
    if (config.effective_clock() == ClockKind::virtual_time) {
      virtual_ = std::make_shared<VirtualClock>();
      clock = virtual_;
    } else {
      clock = std::make_shared<SteadyClock>();
    }
    SamplerOptions options;
    options.interval_s = config.interval_s;
    options.label = config.label;
    options.phase = phase;
    options.stream_to = path_;
    handle_.emplace(start_sampler(std::move(backend), options, clock));
  }

  /// Charges simulated seconds; no-op on the wall clock.
  void charge(double seconds) {
    if (!virtual_ || seconds <= 0.0) return;
    virtual_->advance(seconds);
    charged_ += seconds;
  }

  /// Ends sampling and rewrites the trace from the validated result. The
  /// window is held open until two readings exist so the run has a span.
  void finish() {
    if (virtual_) {
      if (charged_ <= config_.interval_s) charge(config_.interval_s - charged_ + 1e-6);
    } else {
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(5 * config_.interval_s);
      while (handle_->sample_count() < 2 && std::chrono::steady_clock::now() < deadline) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
    }
    Trace trace = handle_->stop();
    write_csv(trace, path_);
  }

  ~PhaseWindow() {
    if (handle_ && handle_->active()) {
      try {
        finish();
      } catch (...) {
        // the streamed partial trace stays on disk
      }
    }
  }

  WorkloadPhase phase() const noexcept { return phase_; }
  std::string file_name() const { return path_.filename().string(); }

 private:
  const BenchConfig& config_;
  WorkloadPhase phase_;
  fs::path path_;
  std::shared_ptr<VirtualClock> virtual_;
  std::optional<SamplerHandle> handle_;
  double charged_ = 0.0;
};

struct PhaseOutcome {
  WorkloadPhase phase;
  long images = 0;
  std::optional<double> score;
};

struct ToyState {
  DatasetManifest train_manifest;
  std::vector<double> cond;
  std::vector<double> uncond;
  NoiseSchedule schedule = make_schedule();
  std::optional<Denoiser> model;
  std::optional<DatasetManifest> samples;
};

std::string first_prompt(const BenchConfig& config) {
  if (config.prompt_file.empty()) return config.prompt;
  const auto lines = load_prompt_lines(config.prompt_file);
  if (lines.empty()) throw Error(Errc::config_error, fmt::format("'{}' holds no prompt", config.prompt_file.string()));
  return lines.front();
}

IdentifierRegistry registry_for(const BenchConfig& config) {
  if (!config.identifiers_file.empty()) return IdentifierRegistry::load(config.identifiers_file);
  IdentifierRegistry r;
  r.add("nbd", "anthracnose");
  return r;
}

void run_training(const BenchConfig& config, ToyState& state, PhaseWindow& window) {
  if (!state.model) state.model.emplace(config.shape, config.seed, true);
  const auto grids = load_manifest_grids(state.train_manifest, config.shape.width, config.shape.height);
  std::vector<TrainExample> dataset;
  dataset.reserve(grids.size());
  for (const auto& g : grids) dataset.push_back({g, state.cond});

  TrainConfig tc = config.train;
  tc.rng_seed = config.seed;
  std::ofstream loss_out(config.out_dir / "loss.csv", std::ios::binary | std::ios::trunc);
  if (!loss_out) throw Error(Errc::io_error, "cannot write loss.csv");
  loss_out << "update,loss\n";
  auto result = train(*state.model, dataset, state.schedule, tc, [&](int update, double loss) {
    loss_out << fmt::format("{},{}\n", update, loss);
    loss_out.flush();
    window.charge(config.seconds_per_update);
  });
  state.model = std::move(result.model);
  save_checkpoint(config.out_dir / "model.ckpt", Checkpoint{*state.model, state.schedule, tc});
}

long run_inference(const BenchConfig& config, ToyState& state, PhaseWindow& window) {
  if (!state.model) state.model.emplace(config.shape, config.seed, true);
  const fs::path dir = config.out_dir / "samples";
  fs::create_directories(dir);
  DatasetManifest manifest;
  manifest.target_width = config.shape.width;
  manifest.target_height = config.shape.height;
  manifest.crop = state.train_manifest.crop;
  manifest.base_dir = dir;
  const std::string label = state.train_manifest.entries.empty() ? "" : state.train_manifest.entries[0].class_label;
  long made = 0;
  for (long i = 0; i < config.images_to_generate; ++i) {
    SampleOptions options;
    options.num_inference_steps = config.inference_steps;
    options.guidance_scale = config.guidance_scale;
    options.seed = config.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i + 1));
    const ImageGrid img = sample(*state.model, state.schedule, state.cond, state.uncond, options);
    const std::string name = fmt::format("sample_{:04d}.png", i);
    write_png(dir / name, from_grid(img));
    manifest.entries.push_back({name, label, ImageSource::field, View::canopy, config.shape.width, config.shape.height});
    ++made;
    window.charge(config.seconds_per_image);
  }
  write_manifest(dir / kManifestFileName, manifest);
  state.samples = manifest;
  return made;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

DatasetManifest manifest_of_directory(const fs::path& dir) {
  DatasetManifest m;
  m.base_dir = dir;
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path().filename());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) m.entries.push_back({f.string(), "", ImageSource::field, View::canopy, 0, 0});
  return m;
}

/// Runs the command through the shell; a nonzero or abnormal exit throws.
void run_external(const BenchConfig& config) {
  const int status = std::system(config.command.c_str());
  if (status == -1) throw Error(Errc::io_error, "could not start the workload command");
  if (WIFSIGNALED(status)) throw Error(Errc::io_error, fmt::format("workload killed by signal {}", WTERMSIG(status)));
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error(Errc::io_error, fmt::format("workload exited with status {}", WEXITSTATUS(status)));
  }
}

std::optional<double> evaluate(const BenchConfig& config, const DatasetManifest& real, const DatasetManifest& synth) {
  if (real.entries.empty() || synth.entries.empty()) return std::nullopt;
  const auto extractor =
      FeatureExtractor::seeded(config.extractor_seed, config.shape.channels, config.shape.height, config.shape.width);
  const auto score = corpus_score(extractor, real, synth);
  std::vector<std::string> synth_names, real_names;
  for (const auto& e : synth.entries) synth_names.push_back(e.path);
  for (const auto& e : real.entries) real_names.push_back(e.path);
  std::ofstream out(config.out_dir / "lpips_pairs.csv", std::ios::binary | std::ios::trunc);
  out << pair_scores_to_csv(score, synth_names, real_names);
  if (!out) throw Error(Errc::io_error, "cannot write lpips_pairs.csv");
  return score.mean;
}

}  // namespace

BenchReport run_bench(const BenchConfig& config) {
  config.validate();
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw Error(Errc::io_error, fmt::format("cannot create '{}': {}", config.out_dir.string(), ec.message()));
  {
    std::ofstream out(config.out_dir / "config.ini", std::ios::binary | std::ios::trunc);
    out << bench_config_to_ini(config);
  }

  auto backend = make_backend(config);
  backend->probe();

  BenchReport report;
  Provenance prov;
  prov.config_hash = config_hash(config);
  prov.seed = config.seed;
  prov.started_utc = now_utc();
  prov.backend = backend->name();
  prov.clock = config.effective_clock() == ClockKind::virtual_time ? "virtual" : "wall";

  std::vector<PhaseOutcome> outcomes;
  ToyState toy;
  if (config.workload == WorkloadKind::toy) {
    toy.train_manifest = config.train_manifest.empty()
                             ? write_synthetic_dataset(config.out_dir / "dataset", config.synthetic_images,
                                                       config.shape.width, config.shape.height, config.seed)
                             : read_manifest(config.train_manifest);
    const auto ast = parse_prompt(first_prompt(config), registry_for(config));
    toy.cond = embed_prompt(ast, config.vocab_seed, config.shape.cond_dim);
    toy.uncond.assign(static_cast<std::size_t>(config.shape.cond_dim), 0.0);
    if (!config.checkpoint.empty()) {
      auto ckpt = load_checkpoint(config.checkpoint);
      if (ckpt.model.shape() != config.shape) {
        throw Error(Errc::config_error, "checkpoint shape differs from the configured model");
      }
      toy.model.emplace(std::move(ckpt.model));
      toy.schedule = ckpt.schedule;
    }
  }

  for (WorkloadPhase phase : config.phases) {
    PhaseOutcome outcome{phase, 0, std::nullopt};
    {
      PhaseWindow window(config, backend, phase);
      try {
        if (config.workload == WorkloadKind::external) {
          run_external(config);
        } else if (phase == WorkloadPhase::training) {
          run_training(config, toy, window);
        } else {
          outcome.images = run_inference(config, toy, window);
        }
      } catch (const std::exception& e) {
        report.complete = false;
        report.failure = fmt::format("{} phase failed: {}", to_string(phase), e.what());
      }
      window.finish();
    }
    outcomes.push_back(outcome);
    if (!report.complete) break;
  }

  // Evaluation and metrics read only what is on disk.
  for (auto& outcome : outcomes) {
    if (config.workload == WorkloadKind::external && !config.external_images.empty()) {
      const auto produced = manifest_of_directory(config.external_images);
      outcome.images = static_cast<long>(produced.entries.size());
      const fs::path real_path = !config.real_manifest.empty() ? config.real_manifest : config.train_manifest;
      if (report.complete && !real_path.empty()) outcome.score = evaluate(config, read_manifest(real_path), produced);
    } else if (config.workload == WorkloadKind::toy && outcome.phase == WorkloadPhase::inference && report.complete &&
               toy.samples) {
      const auto real = config.real_manifest.empty() ? toy.train_manifest : read_manifest(config.real_manifest);
      outcome.score = evaluate(config, real, *toy.samples);
    }
    RunRecord rec;
    rec.trace_file = trace_file_name(config.label, outcome.phase);
    rec.trace = read_csv(config.out_dir / rec.trace_file, config.interval_s);
    rec.trace.label = config.label;
    rec.trace.phase = outcome.phase;
    try {
      rec.metrics = summarize(rec.trace, outcome.images);
    } catch (const Error& e) {
      if (e.code() != Errc::too_few_samples) throw;
      report.complete = false;
      if (report.failure.empty()) report.failure = e.what();
      rec.metrics.images_generated = outcome.images;
    }
    rec.metrics.label = config.label;
    rec.metrics.phase = outcome.phase;
    rec.perceptual_score = outcome.score;
    report.runs.push_back(std::move(rec));
  }

  prov.finished_utc = now_utc();
  report.provenance = prov;
  write_report(report, config.out_dir);
  return report;
}

}  // namespace leafbench
