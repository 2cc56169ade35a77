// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "leafbench/telemetry.hpp"

namespace leafbench {

inline constexpr double kJoulesPerKwh = 3.6e6;

struct RunMetrics {
  std::string label;
  WorkloadPhase phase = WorkloadPhase::training;
  long peak_memory_mib = 0;
  double avg_power_w = 0.0;
  double wall_time_h = 0.0;
  double energy_kwh = 0.0;
  long images_generated = 0;
  double energy_per_image_kwh = 0.0;

  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

/// Trapezoidal integral of power over elapsed time, in kWh. A gap between
/// samples is bridged by the trapezoid spanning it. Needs two samples.
double integrate_energy(const Trace& trace);

/// energy / images, or 0 when no images were produced.
double energy_per_image(double energy_kwh, long images);

/// Peak memory, time-weighted mean power, span, energy and per-image energy.
RunMetrics summarize(const Trace& trace, long images_generated);

enum class Metric { peak_memory, avg_power, energy, wall_time, energy_per_image };
inline constexpr std::array<Metric, 5> kAllMetrics = {Metric::peak_memory, Metric::avg_power, Metric::energy,
                                                      Metric::wall_time, Metric::energy_per_image};

std::string_view to_string(Metric m) noexcept;
double metric_value(const RunMetrics& run, Metric m) noexcept;

/// numerator / denominator; how many times larger the first run's value is.
double ratio(const RunMetrics& numerator, const RunMetrics& denominator, Metric m);

struct RatioRow {
  std::string label;
  Metric metric;
  double value = 0.0;
  double baseline_value = 0.0;
  double ratio = 0.0;
};

struct RatioTable {
  std::string baseline;
  std::vector<RatioRow> rows;  // runs in input order, metrics in kAllMetrics order
};

/// Every run's metrics divided by the baseline run's. Needs two or more runs
/// (Errc::precondition) and a run labelled baseline (Errc::baseline_missing).
RatioTable compare(std::span<const RunMetrics> runs, std::string_view baseline);

/// Rounds to the given significant figures and appends "×", e.g. "2.3×".
std::string format_ratio(double ratio, int significant = 2);
double round_significant(double value, int significant);

inline constexpr const char* kMetricsCsvHeader =
    "label,phase,peak_memory_mib,avg_power_w,wall_time_h,energy_kwh,images_generated,energy_per_image_kwh";

std::string metrics_to_csv(std::span<const RunMetrics> runs);
std::vector<RunMetrics> parse_metrics_csv(std::string_view text);
std::string ratios_to_csv(const RatioTable& table);
std::string ratios_to_text(const RatioTable& table);

}  // namespace leafbench
