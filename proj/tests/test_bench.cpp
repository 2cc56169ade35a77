// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "leafbench/bench.hpp"
#include "leafbench/dataset.hpp"
#include "leafbench/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace lb = leafbench;
namespace fs = std::filesystem;
using lb::testing::TempDir;
using lb::testing::metrics_row;
using lb::testing::parse_rows;
using lb::testing::slurp;

namespace {

/// Small synthetic-backend toy run; fast enough for unit tests.
lb::BenchConfig small_config(const fs::path& out) {
  lb::BenchConfig c;
  c.label = "toy";
  c.out_dir = out;
  c.seed = 3;
  c.synthetic_images = 4;
  c.shape = lb::DenoiserShape{3, 8, 8, 8, 16, 8};
  c.train.training_steps = 12;
  c.train.gradient_accumulation_steps = 1;
  c.images_to_generate = 3;
  c.inference_steps = 4;
  return c;
}

}  // namespace

TEST(BenchConfig, ParsesSectionsAndResolvesPaths) {
  const auto c = lb::parse_bench_config(
      "[bench]\nlabel = SD3.5M\nphases = inference\nimages = 50\nout = runs/a\nseed = 9\n"
      "[train]\nlearning_rate = 0.001\nsnr_gamma = none\nmode = lora\n"
      "[telemetry]\nbackend = synthetic:trace.csv\nclock = wall\ninterval = 0.5\n",
      "/base");
  EXPECT_EQ(c.label, "SD3.5M");
  EXPECT_EQ(c.phases, std::vector<lb::WorkloadPhase>{lb::WorkloadPhase::inference});
  EXPECT_EQ(c.images_to_generate, 50);
  EXPECT_EQ(c.out_dir, fs::path("/base/runs/a"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.learning_rate, 0.001);
  EXPECT_FALSE(c.train.snr_gamma.has_value());
  EXPECT_EQ(c.train.mode, lb::FineTuneMode::lora);
  EXPECT_EQ(c.backend_trace, fs::path("/base/trace.csv"));
  EXPECT_EQ(c.effective_clock(), lb::ClockKind::wall);
  EXPECT_EQ(c.interval_s, 0.5);
}

TEST(BenchConfig, CanonicalFormRoundTrips) {
  lb::BenchConfig c;
  c.label = "x";
  c.train.snr_gamma.reset();
  c.guidance_scale = 7.25;
  c.clock = lb::ClockKind::wall;
  const auto text = lb::bench_config_to_ini(c);
  EXPECT_EQ(lb::bench_config_to_ini(lb::parse_bench_config(text)), text);
  EXPECT_EQ(lb::config_hash(lb::parse_bench_config(text)), lb::config_hash(c));
  c.seed = 1;
  EXPECT_NE(lb::config_hash(c), lb::config_hash(lb::parse_bench_config(text)));
  EXPECT_EQ(lb::config_hash(c).size(), 16u);
}

TEST(BenchConfig, RejectsBadInput) {
  auto code = [](const std::string& text) {
    try {
      lb::parse_bench_config(text).validate();
    } catch (const lb::Error& e) {
      return e.code();
    }
    return lb::Errc::precondition;  // no error
  };
  EXPECT_EQ(code("[bench]\nlabell = x\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[nope]\na = 1\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[bench]\nimages = many\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[bench]\nphases = training,training\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[bench]\nlabel = a,b\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[bench]\nworkload = external\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[train]\nlearning_rate = -1\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[model]\nheight = 7\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[data]\ntrain_manifest = /does/not/exist.tsv\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[telemetry]\nbackend = real\nclock = virtual\n"), lb::Errc::config_error);
  EXPECT_EQ(code("[bench]\nlabel = ok\n"), lb::Errc::precondition);
}

TEST(Bench, ToyInferenceSmoke) {
  TempDir dir("bench-smoke");
  auto c = small_config(dir / "run");
  c.phases = {lb::WorkloadPhase::inference};
  c.images_to_generate = 10;
  const auto report = lb::run_bench(c);
  ASSERT_TRUE(report.complete) << report.failure;
  ASSERT_EQ(report.runs.size(), 1u);
  EXPECT_EQ(report.runs[0].metrics.images_generated, 10);
  ASSERT_TRUE(report.runs[0].perceptual_score.has_value());
  for (const char* f : {"config.ini", "trace-toy-inference.csv", "metrics.csv", "scores.csv", "report.txt",
                        "provenance.ini", "lpips_pairs.csv", "power_memory-toy-inference.svg", "time_vs_score.svg",
                        "samples/manifest.tsv", "dataset/manifest.tsv"}) {
    EXPECT_TRUE(fs::exists(c.out_dir / f)) << f;
  }
  const auto samples = lb::read_manifest(c.out_dir / "samples" / lb::kManifestFileName);
  EXPECT_EQ(samples.entries.size(), 10u);
  for (const auto& e : samples.entries) EXPECT_TRUE(fs::exists(samples.resolve(e))) << e.path;
  // 10 images at 2 virtual seconds each
  EXPECT_EQ(report.runs[0].trace.samples.size(), 20u);
  EXPECT_DOUBLE_EQ(report.runs[0].metrics.wall_time_h, 19.0 / 3600.0);
}

TEST(Bench, MetricsCsvIsByteDeterministic) {
  TempDir dir("bench-det");
  const auto a = lb::run_bench(small_config(dir / "a"));
  const auto b = lb::run_bench(small_config(dir / "b"));
  ASSERT_TRUE(a.complete && b.complete);
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "loss.csv"), slurp(dir / "b" / "loss.csv"));
  EXPECT_EQ(slurp(dir / "a" / "scores.csv"), slurp(dir / "b" / "scores.csv"));
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  auto c = small_config(dir / "c");
  c.seed = 4;
  lb::run_bench(c);
  EXPECT_NE(slurp(dir / "a" / "loss.csv"), slurp(dir / "c" / "loss.csv"));
}

TEST(Bench, ReportNumbersMatchPersistedTraces) {
  TempDir dir("bench-trace");
  auto c = small_config(dir / "run");
  c.synthetic_reading = {5000, 123.45, 80};
  const auto report = lb::run_bench(c);
  ASSERT_TRUE(report.complete);
  const std::string text = slurp(c.out_dir / "report.txt");
  for (const char* phase : {"training", "inference"}) {
    const auto rows = parse_rows(c.out_dir / fmt::format("trace-toy-{}.csv", phase));
    ASSERT_GE(rows.size(), 2u);
    double joules = 0, peak = 0;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      joules += 0.5 * (rows[i].power + rows[i + 1].power) * (rows[i + 1].t - rows[i].t);
    }
    for (const auto& r : rows) peak = std::max(peak, static_cast<double>(r.mem));
    const double span = rows.back().t - rows.front().t;
    auto m = metrics_row(c.out_dir / "metrics.csv", phase);
    ASSERT_FALSE(m.empty()) << phase;
    EXPECT_NEAR(std::stod(m["energy_kwh"]), joules / 3.6e6, 1e-15);
    EXPECT_EQ(std::stod(m["peak_memory_mib"]), peak);
    EXPECT_NEAR(std::stod(m["avg_power_w"]), joules / span, 1e-9);
    EXPECT_NEAR(std::stod(m["wall_time_h"]), span / 3600.0, 1e-15);
    EXPECT_NE(text.find(fmt::format("{:.6f}", joules / 3.6e6)), std::string::npos) << phase;
    EXPECT_NE(text.find(fmt::format("{:.1f}", joules / span)), std::string::npos) << phase;
  }
  // rendering what is on disk reproduces the report byte for byte
  EXPECT_EQ(lb::render_report(lb::load_run_directory(c.out_dir)).text, text);
  const auto scores = slurp(c.out_dir / "scores.csv");
  EXPECT_NE(scores.find(fmt::format("toy,inference,{}", *report.runs[1].perceptual_score)), std::string::npos);
}

TEST(Bench, RenderIsDeterministicAndEmptyReportIsHeaderOnly) {
  const lb::BenchReport empty;
  const auto r = lb::render_report(empty);
  EXPECT_TRUE(r.plots.empty());
  EXPECT_EQ(std::count(r.text.begin(), r.text.end(), '\n'), 1);
  EXPECT_EQ(r.text.rfind("label", 0), 0u);
  TempDir dir("bench-empty");
  lb::write_report(empty, dir.path());
  EXPECT_EQ(slurp(dir / "report.txt"), r.text);

  lb::BenchReport full;
  for (const auto& ref : lb::testing::reference_runs()) {
    lb::RunRecord rec;
    rec.trace = lb::testing::shaped_trace(ref.label, ref.phase, ref.seconds, ref.power_w, ref.memory_mib);
    rec.metrics = lb::summarize(rec.trace, ref.phase == lb::WorkloadPhase::inference ? 500 : 0);
    rec.metrics.label = ref.label;
    rec.metrics.phase = ref.phase;
    rec.perceptual_score = ref.score;
    full.runs.push_back(rec);
  }
  lb::attach_ratios(full, "SD3.5M");
  const auto once = lb::render_report(full);
  const auto twice = lb::render_report(full);
  EXPECT_EQ(once.text, twice.text);
  EXPECT_EQ(once.plots, twice.plots);
  EXPECT_EQ(once.plots.size(), 7u);
}

TEST(Bench, ReferenceFixtureRatiosAndScatter) {
  TempDir dir("bench-ref");
  lb::BenchReport report;
  for (const auto& ref : lb::testing::reference_runs()) {
    // through the persisted CSV, as a real run would be
    const auto path = dir / lb::trace_file_name(ref.label, ref.phase);
    lb::write_csv(lb::testing::shaped_trace(ref.label, ref.phase, ref.seconds, ref.power_w, ref.memory_mib), path);
    lb::RunRecord rec;
    rec.trace = lb::read_csv(path);
    rec.metrics = lb::summarize(rec.trace, ref.phase == lb::WorkloadPhase::inference ? 500 : 0);
    rec.metrics.label = ref.label;
    rec.metrics.phase = ref.phase;
    rec.perceptual_score = ref.score;
    report.runs.push_back(rec);
  }
  lb::attach_ratios(report, "SD3.5M");
  ASSERT_EQ(report.ratios.size(), 2u);
  const auto& training = report.ratios[0].table;
  EXPECT_EQ(report.ratios[0].phase, lb::WorkloadPhase::training);
  auto find = [&](const std::string& label, lb::Metric m) {
    for (const auto& r : training.rows)
      if (r.label == label && r.metric == m) return r.ratio;
    return 0.0;
  };
  const double mem_xl = find("SDXL", lb::Metric::peak_memory);
  const double pow_xl = find("SDXL", lb::Metric::avg_power);
  const double pow_l = find("SD3.5L", lb::Metric::avg_power);
  EXPECT_NEAR(mem_xl, 44640.0 / 19338.0, 1e-12);
  EXPECT_NEAR(pow_xl, 221.0 / 167.4, 1e-12);
  EXPECT_NEAR(pow_l, 226.4 / 167.4, 1e-12);
  EXPECT_EQ(lb::format_ratio(mem_xl), "2.3×");
  EXPECT_EQ(lb::format_ratio(pow_xl), "1.3×");
  EXPECT_EQ(lb::format_ratio(pow_l, 3), "1.35×");

  const auto points = lb::scatter_points(report);
  ASSERT_EQ(points.size(), 2u);
  EXPECT_EQ(points[1].label, "SD3.5M");
  EXPECT_NEAR(points[1].hours, 1.59, 1e-12);
  EXPECT_EQ(points[1].score, 0.34);
  EXPECT_NEAR(points[0].hours, 1.06, 1e-12);
  const auto rendered = lb::render_report(report);
  ASSERT_EQ(rendered.plots.back().first, "time_vs_score.svg");
  EXPECT_NE(rendered.plots.back().second.find("SD3.5M (1.59 h, 0.34)"), std::string::npos);
}

TEST(Bench, ExternalCommandDurationMatchesWallClock) {
  TempDir dir("bench-ext");
  lb::BenchConfig c;
  c.label = "stub";
  c.out_dir = dir / "run";
  c.workload = lb::WorkloadKind::external;
  c.phases = {lb::WorkloadPhase::inference};
  c.external_images = dir / "imgs";
  fs::create_directories(c.external_images);
  c.command = fmt::format("sleep 3 && touch '{0}/a.png' '{0}/b.png'", c.external_images.string());
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = lb::run_bench(c);
  const double measured = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_TRUE(report.complete) << report.failure;
  const double traced = report.runs[0].metrics.wall_time_h * 3600.0;
  EXPECT_NEAR(traced, 3.0, 2.0);
  EXPECT_LE(traced, measured);
  EXPECT_EQ(report.runs[0].metrics.images_generated, 2);
}

TEST(Bench, FailingWorkloadLeavesPartialArtifacts) {
  TempDir dir("bench-fail");
  lb::BenchConfig c;
  c.label = "broken";
  c.out_dir = dir / "run";
  c.workload = lb::WorkloadKind::external;
  c.phases = {lb::WorkloadPhase::training};
  c.command = "sleep 1; exit 7";
  const auto report = lb::run_bench(c);
  EXPECT_FALSE(report.complete);
  EXPECT_NE(report.failure.find("status 7"), std::string::npos) << report.failure;
  const auto trace = lb::read_csv(c.out_dir / "trace-broken-training.csv");
  EXPECT_GE(trace.samples.size(), 1u);
  EXPECT_EQ(slurp(c.out_dir / "report.txt").rfind("status: INCOMPLETE", 0), 0u);
  EXPECT_FALSE(lb::load_run_directory(c.out_dir).complete);

  // a diverging toy run stops after training with its loss log kept
  auto toy = small_config(dir / "toy");
  toy.train.learning_rate = 1e200;
  const auto diverged = lb::run_bench(toy);
  EXPECT_FALSE(diverged.complete);
  EXPECT_EQ(diverged.runs.size(), 1u);
  EXPECT_TRUE(fs::exists(toy.out_dir / "loss.csv"));
  EXPECT_FALSE(fs::exists(toy.out_dir / "samples"));
}

TEST(Bench, UnavailableBackendThrowsBeforeWork) {
  TempDir dir("bench-nogpu");
  lb::BenchConfig c = small_config(dir / "run");
  c.backend = lb::BackendKind::real;
  c.gpu_index = 97;  // no such board even on a GPU host
  try {
    lb::run_bench(c);
    FAIL();
  } catch (const lb::Error& e) {
    EXPECT_EQ(e.code(), lb::Errc::backend_unavailable);
  }
  EXPECT_FALSE(fs::exists(c.out_dir / "metrics.csv"));
}
