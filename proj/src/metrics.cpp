// SPDX-License-Identifier: Apache-2.0
#include "leafbench/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

namespace {

// Watt-seconds under the piecewise-linear power curve.
double integrate_watt_seconds(const std::vector<TelemetrySample>& samples) {
  double total = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double dt = samples[i].elapsed_s - samples[i - 1].elapsed_s;
    total += 0.5 * (samples[i].power_w + samples[i - 1].power_w) * dt;
  }
  return total;
}

void require_two(const Trace& trace) {
  if (trace.samples.size() < 2) {
    throw Error(Errc::too_few_samples,
                fmt::format("trace '{}' has {} samples; energy needs at least 2", trace.label, trace.samples.size()));
  }
}

}  // namespace

double integrate_energy(const Trace& trace) {
  require_two(trace);
  return integrate_watt_seconds(trace.samples) / kJoulesPerKwh;
}

double energy_per_image(double energy_kwh, long images) {
  return images > 0 ? energy_kwh / static_cast<double>(images) : 0.0;
}

RunMetrics summarize(const Trace& trace, long images_generated) {
  require_two(trace);
  if (images_generated < 0) throw Error(Errc::invalid_range, "image count must be nonnegative");
  RunMetrics m;
  m.label = trace.label;
  m.phase = trace.phase;
  for (const auto& s : trace.samples) m.peak_memory_mib = std::max(m.peak_memory_mib, s.memory_mib);
  const double span_s = trace.samples.back().elapsed_s - trace.samples.front().elapsed_s;
  const double watt_seconds = integrate_watt_seconds(trace.samples);
  m.avg_power_w = watt_seconds / span_s;
  m.wall_time_h = span_s / 3600.0;
  m.energy_kwh = watt_seconds / kJoulesPerKwh;
  m.images_generated = images_generated;
  m.energy_per_image_kwh = energy_per_image(m.energy_kwh, images_generated);
  return m;
}

std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::peak_memory: return "peak_memory_mib";
    case Metric::avg_power: return "avg_power_w";
    case Metric::energy: return "energy_kwh";
    case Metric::wall_time: return "wall_time_h";
    case Metric::energy_per_image: return "energy_per_image_kwh";
  }
  return "?";
}

double metric_value(const RunMetrics& run, Metric m) noexcept {
  switch (m) {
    case Metric::peak_memory: return static_cast<double>(run.peak_memory_mib);
    case Metric::avg_power: return run.avg_power_w;
    case Metric::energy: return run.energy_kwh;
    case Metric::wall_time: return run.wall_time_h;
    case Metric::energy_per_image: return run.energy_per_image_kwh;
  }
  return 0.0;
}

double ratio(const RunMetrics& numerator, const RunMetrics& denominator, Metric m) {
  return metric_value(numerator, m) / metric_value(denominator, m);
}

RatioTable compare(std::span<const RunMetrics> runs, std::string_view baseline) {
  if (runs.size() < 2) throw Error(Errc::precondition, "comparison needs at least two runs");
  const auto base = std::find_if(runs.begin(), runs.end(), [&](const RunMetrics& r) { return r.label == baseline; });
  if (base == runs.end()) throw Error(Errc::baseline_missing, fmt::format("no run labelled '{}'", baseline));
  RatioTable table;
  table.baseline = std::string(baseline);
  for (const auto& run : runs) {
    for (Metric m : kAllMetrics) {
      table.rows.push_back({run.label, m, metric_value(run, m), metric_value(*base, m), ratio(run, *base, m)});
    }
  }
  return table;
}

double round_significant(double value, int significant) {
  if (value == 0.0 || !std::isfinite(value)) return value;
  const int magnitude = static_cast<int>(std::floor(std::log10(std::abs(value))));
  const double scale = std::pow(10.0, significant - 1 - magnitude);
  return std::round(value * scale) / scale;
}

std::string format_ratio(double r, int significant) {
  if (!std::isfinite(r)) return "n/a";
  if (r == 0.0) return "0×";
  const double rounded = round_significant(r, significant);
  const int magnitude = static_cast<int>(std::floor(std::log10(std::abs(rounded))));
  const int decimals = std::max(0, significant - 1 - magnitude);
  return fmt::format("{:.{}f}×", rounded, decimals);
}

std::string metrics_to_csv(std::span<const RunMetrics> runs) {
  std::string out = kMetricsCsvHeader;
  out += '\n';
  for (const auto& r : runs) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", r.label, to_string(r.phase), r.peak_memory_mib, r.avg_power_w,
                       r.wall_time_h, r.energy_kwh, r.images_generated, r.energy_per_image_kwh);
  }
  return out;
}

namespace {

template <typename T>
T parse_field(std::string_view s, std::size_t line_no) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(Errc::schema_mismatch, fmt::format("metrics line {}: bad number '{}'", line_no, s));
  }
  return value;
}

}  // namespace

std::vector<RunMetrics> parse_metrics_csv(std::string_view text) {
  std::vector<RunMetrics> runs;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line_no == 1) {
      if (line != kMetricsCsvHeader) throw Error(Errc::schema_mismatch, "unexpected metrics header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    for (std::string_view rest = line;;) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != 8) throw Error(Errc::schema_mismatch, fmt::format("metrics line {}: need 8 fields", line_no));
    const auto phase = parse_phase(f[1]);
    if (!phase) throw Error(Errc::schema_mismatch, fmt::format("metrics line {}: bad phase", line_no));
    runs.push_back({std::string(f[0]), *phase, parse_field<long>(f[2], line_no), parse_field<double>(f[3], line_no),
                    parse_field<double>(f[4], line_no), parse_field<double>(f[5], line_no),
                    parse_field<long>(f[6], line_no), parse_field<double>(f[7], line_no)});
  }
  if (line_no == 0) throw Error(Errc::schema_mismatch, "metrics file is empty");
  return runs;
}

std::string ratios_to_csv(const RatioTable& table) {
  std::string out = "label,baseline,metric,value,baseline_value,ratio,display\n";
  for (const auto& r : table.rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.label, table.baseline, to_string(r.metric), r.value,
                       r.baseline_value, r.ratio, format_ratio(r.ratio));
  }
  return out;
}

std::string ratios_to_text(const RatioTable& table) {
  std::size_t label_w = 5;
  for (const auto& r : table.rows) label_w = std::max(label_w, r.label.size());
  std::string out = fmt::format("Ratios relative to {}\n", table.baseline);
  out += fmt::format("{:<{}}  {:<22}  {:>14}  {:>14}  {:>8}\n", "run", label_w, "metric", "value", "baseline", "ratio");
  for (const auto& r : table.rows) {
    out += fmt::format("{:<{}}  {:<22}  {:>14.4f}  {:>14.4f}  {:>8}\n", r.label, label_w, to_string(r.metric), r.value,
                       r.baseline_value, format_ratio(r.ratio));
  }
  return out;
}

}  // namespace leafbench
