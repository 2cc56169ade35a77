// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "leafbench/denoiser.hpp"
#include "leafbench/lpips.hpp"
#include "leafbench/metrics.hpp"
#include "leafbench/telemetry.hpp"
#include "leafbench/train.hpp"

namespace leafbench {

enum class WorkloadKind { toy, external };
enum class BackendKind { synthetic, real };
enum class ClockKind { virtual_time, wall };

inline constexpr const char* kDefaultPrompt =
    "a photo of watermelon showing nbd anthracnose (1.2) (Colletotrichum orbiculare) disease";

/// Everything a bench run needs. Loaded from a sectioned key = value file;
/// see docs in README for the keys.
struct BenchConfig {
  std::string label = "toy";
  std::vector<WorkloadPhase> phases = {WorkloadPhase::training, WorkloadPhase::inference};
  long images_to_generate = 500;
  std::filesystem::path out_dir = "bench-out";
  std::uint64_t seed = 0;

  WorkloadKind workload = WorkloadKind::toy;
  std::string command;                     // external workload, run through /bin/sh
  std::filesystem::path external_images;   // where the command leaves its images

  std::filesystem::path train_manifest;    // empty: synthesize a dataset
  int synthetic_images = 36;
  std::filesystem::path real_manifest;     // LPIPS reference; defaults to the training set
  std::string prompt = kDefaultPrompt;
  std::filesystem::path prompt_file;       // first prompt line wins over `prompt`
  std::filesystem::path identifiers_file;  // default registry binds nbd -> anthracnose
  std::uint64_t vocab_seed = 0;

  DenoiserShape shape;
  std::filesystem::path checkpoint;        // start point for inference-only runs
  TrainConfig train;
  int inference_steps = 50;
  double guidance_scale = 2.5;

  BackendKind backend = BackendKind::synthetic;
  std::filesystem::path backend_trace;     // synthetic:<file> replays a trace CSV
  BackendReading synthetic_reading{4096, 150.0, 95};
  int gpu_index = 0;
  std::optional<ClockKind> clock;          // default: virtual for synthetic toy runs
  double interval_s = 1.0;
  double seconds_per_update = 1.0;         // virtual time charged per optimizer update
  double seconds_per_image = 2.0;          // and per generated image

  std::uint64_t extractor_seed = kDefaultExtractorSeed;

  ClockKind effective_clock() const;
  /// Throws Errc::config_error naming the offending key.
  void validate() const;
};

/// Relative paths in the file resolve against base_dir. Unknown sections or
/// keys are rejected (Errc::config_error).
BenchConfig parse_bench_config(std::string_view text, const std::filesystem::path& base_dir = {});
BenchConfig load_bench_config(const std::filesystem::path& path);
/// Canonical form with every key spelled out; parsing it gives the same config.
std::string bench_config_to_ini(const BenchConfig& config);
/// 64-bit FNV-1a of the canonical form, as 16 hex digits.
std::string config_hash(const BenchConfig& config);

struct RunRecord {
  RunMetrics metrics;
  std::optional<double> perceptual_score;
  std::string trace_file;  // relative to the run directory
  Trace trace;             // as read back from trace_file
};

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_utc;
  std::string finished_utc;
  std::string backend;
  std::string clock;
};

struct PhaseRatios {
  WorkloadPhase phase = WorkloadPhase::training;
  RatioTable table;
};

struct BenchReport {
  std::vector<RunRecord> runs;
  std::vector<PhaseRatios> ratios;
  std::optional<Provenance> provenance;
  bool complete = true;
  std::string failure;
};

/// Ratio tables per phase against the run labelled baseline; phases with
/// fewer than two runs or without the baseline are skipped.
void attach_ratios(BenchReport& report, std::string_view baseline);

struct ScatterPoint {
  std::string label;
  WorkloadPhase phase = WorkloadPhase::inference;
  double hours = 0.0;
  double score = 0.0;
};

/// One point per scored run: wall time in hours against perceptual score.
std::vector<ScatterPoint> scatter_points(const BenchReport& report);

struct RenderedReport {
  std::string text;
  std::vector<std::pair<std::string, std::string>> plots;  // file name, SVG document
};

/// Pure function of the report: fixed columns and rounding, one dual-axis
/// power/memory plot per run and a time-vs-score scatter when any run is
/// scored. An empty report renders a header-only table and no plots.
RenderedReport render_report(const BenchReport& report);

/// Writes report.txt, metrics.csv, scores.csv, ratio files (if any) and the
/// plots into dir.
void write_report(const BenchReport& report, const std::filesystem::path& dir);

/// trace-<label>-<phase>.csv
std::string trace_file_name(const std::string& label, WorkloadPhase phase);

inline constexpr const char* kScoresCsvHeader = "label,phase,score";

/// Rebuilds a report from a run directory's persisted files alone: metrics
/// are recomputed from the trace CSVs, image counts come from metrics.csv
/// and scores from scores.csv.
BenchReport load_run_directory(const std::filesystem::path& dir, double interval_s = 1.0);

/// Runs every configured phase under the sampler and writes all artifacts
/// into config.out_dir. Throws Errc::backend_unavailable before any work
/// when telemetry cannot start. A failing workload does not throw: the
/// report comes back with complete = false and whatever was written so far.
BenchReport run_bench(const BenchConfig& config);

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitWorkloadFailure = 2;
inline constexpr int kExitBackendUnavailable = 3;

}  // namespace leafbench
