// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "leafbench/bench.hpp"
#include "leafbench/error.hpp"

namespace leafbench {

namespace fs = std::filesystem;

namespace {

constexpr double kPlotW = 720;
constexpr double kPlotH = 360;
constexpr double kLeft = 70;
constexpr double kRight = 70;
constexpr double kTop = 40;
constexpr double kBottom = 50;
constexpr const char* kMemoryColor = "#d55e00";
constexpr const char* kPowerColor = "#0072b2";

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  double map(double v, double from, double to) const { return from + (v - lo) / (hi - lo) * (to - from); }
};

Axis axis_for(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(1.0, std::abs(hi) * 0.1);
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

std::string svg_open(const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{3}</text>\n",
      kPlotW, kPlotH, kPlotW / 2, title);
}

std::string frame() {
  return fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", kLeft,
                     kTop, kPlotW - kLeft - kRight, kPlotH - kTop - kBottom);
}

std::string ticks_x(const Axis& a, const std::string& label) {
  std::string out;
  const double y0 = kPlotH - kBottom;
  for (int i = 0; i <= 4; ++i) {
    const double v = a.lo + (a.hi - a.lo) * i / 4.0;
    const double x = a.map(v, kLeft, kPlotW - kRight);
    out += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"#444\"/>\n", x, y0, y0 + 5);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{:.4g}</text>\n", x, y0 + 18, v);
  }
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (kLeft + kPlotW - kRight) / 2,
                     kPlotH - 10, label);
  return out;
}

std::string ticks_y(const Axis& a, bool right, const std::string& label, const char* color) {
  std::string out;
  const double x0 = right ? kPlotW - kRight : kLeft;
  const double dir = right ? 1.0 : -1.0;
  for (int i = 0; i <= 4; ++i) {
    const double v = a.lo + (a.hi - a.lo) * i / 4.0;
    const double y = a.map(v, kPlotH - kBottom, kTop);
    out += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{}\" y2=\"{:.2f}\" stroke=\"{}\"/>\n", x0, y, x0 + 5 * dir,
                       y, color);
    out += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"{}\" fill=\"{}\">{:.4g}</text>\n", x0 + 8 * dir,
                       y + 4, right ? "start" : "end", color, v);
  }
  const double lx = right ? kPlotW - 12 : 14;
  const double ly = (kTop + kPlotH - kBottom) / 2;
  out += fmt::format(
      "<text x=\"{0}\" y=\"{1}\" text-anchor=\"middle\" fill=\"{2}\" transform=\"rotate(-90 {0} {1})\">{3}</text>\n", lx,
      ly, color, label);
  return out;
}

// Polylines break across gaps so a missing reading is not drawn as a ramp.
std::string series(const Trace& trace, const Axis& x, const Axis& y, bool power, const char* color) {
  std::string out;
  std::string points;
  auto flush = [&] {
    if (!points.empty()) {
      out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color, points);
    }
    points.clear();
  };
  for (std::size_t i = 0; i < trace.samples.size(); ++i) {
    const auto& s = trace.samples[i];
    if (i > 0 && s.elapsed_s - trace.samples[i - 1].elapsed_s > 1.5 * trace.interval_s) flush();
    const double v = power ? s.power_w : static_cast<double>(s.memory_mib);
    if (!points.empty()) points += ' ';
    points += fmt::format("{:.2f},{:.2f}", x.map(s.elapsed_s, kLeft, kPlotW - kRight), y.map(v, kPlotH - kBottom, kTop));
  }
  flush();
  return out;
}

std::string power_memory_plot(const RunRecord& run) {
  const auto& samples = run.trace.samples;
  double t_hi = 0, m_lo = 1e300, m_hi = -1e300, p_lo = 1e300, p_hi = -1e300;
  for (const auto& s : samples) {
    t_hi = std::max(t_hi, s.elapsed_s);
    m_lo = std::min(m_lo, static_cast<double>(s.memory_mib));
    m_hi = std::max(m_hi, static_cast<double>(s.memory_mib));
    p_lo = std::min(p_lo, s.power_w);
    p_hi = std::max(p_hi, s.power_w);
  }
  if (samples.empty()) m_lo = m_hi = p_lo = p_hi = 0;
  const Axis x = axis_for(0.0, t_hi);
  const Axis mem = axis_for(std::min(0.0, m_lo), m_hi);
  const Axis pow = axis_for(std::min(0.0, p_lo), p_hi);
  std::string out =
      svg_open(fmt::format("{} ({}): memory and power", run.metrics.label, to_string(run.metrics.phase)));
  out += frame();
  out += ticks_x(x, "elapsed (s)");
  out += ticks_y(mem, false, "memory (MiB)", kMemoryColor);
  out += ticks_y(pow, true, "power (W)", kPowerColor);
  out += series(run.trace, x, mem, false, kMemoryColor);
  out += series(run.trace, x, pow, true, kPowerColor);
  out += "</svg>\n";
  return out;
}

std::string scatter_plot(const std::vector<ScatterPoint>& points) {
  double h_hi = 0, s_hi = 0;
  for (const auto& p : points) {
    h_hi = std::max(h_hi, p.hours);
    s_hi = std::max(s_hi, p.score);
  }
  const Axis x = axis_for(0.0, h_hi);
  const Axis y = axis_for(0.0, std::max(s_hi, 0.5));
  std::string out = svg_open("time taken vs. perceptual score");
  out += frame();
  out += ticks_x(x, "time (h)");
  out += ticks_y(y, false, "LPIPS score", "#222");
  for (const auto& p : points) {
    const double px = x.map(p.hours, kLeft, kPlotW - kRight);
    const double py = y.map(p.score, kPlotH - kBottom, kTop);
    out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"5\" fill=\"{}\"/>\n", px, py, kPowerColor);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{} ({:.2f} h, {:.2f})</text>\n", px + 8, py - 8, p.label,
                       p.hours, p.score);
  }
  out += "</svg>\n";
  return out;
}

std::string plot_name(const RunMetrics& m) {
  return fmt::format("power_memory-{}-{}.svg", m.label, to_string(m.phase));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw Error(Errc::io_error, fmt::format("failed writing '{}'", path.string()));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string scores_to_csv(const BenchReport& report) {
  std::string out = kScoresCsvHeader;
  out += '\n';
  for (const auto& r : report.runs) {
    if (r.perceptual_score) {
      out += fmt::format("{},{},{}\n", r.metrics.label, to_string(r.metrics.phase), *r.perceptual_score);
    }
  }
  return out;
}

}  // namespace

std::string trace_file_name(const std::string& label, WorkloadPhase phase) {
  return fmt::format("trace-{}-{}.csv", label, to_string(phase));
}

void attach_ratios(BenchReport& report, std::string_view baseline) {
  report.ratios.clear();
  for (WorkloadPhase phase : {WorkloadPhase::training, WorkloadPhase::inference}) {
    std::vector<RunMetrics> runs;
    for (const auto& r : report.runs) {
      if (r.metrics.phase == phase) runs.push_back(r.metrics);
    }
    const bool has_baseline =
        std::any_of(runs.begin(), runs.end(), [&](const RunMetrics& m) { return m.label == baseline; });
    if (runs.size() < 2 || !has_baseline) continue;
    report.ratios.push_back({phase, compare(runs, baseline)});
  }
}

std::vector<ScatterPoint> scatter_points(const BenchReport& report) {
  std::vector<ScatterPoint> out;
  for (const auto& r : report.runs) {
    if (r.perceptual_score) out.push_back({r.metrics.label, r.metrics.phase, r.metrics.wall_time_h, *r.perceptual_score});
  }
  return out;
}

RenderedReport render_report(const BenchReport& report) {
  RenderedReport out;
  std::size_t label_w = 5;
  for (const auto& r : report.runs) label_w = std::max(label_w, r.metrics.label.size());
  std::string& t = out.text;
  if (!report.complete) t += fmt::format("status: INCOMPLETE ({})\n\n", report.failure);
  t += fmt::format("{:<{}}  {:<9}  {:>15}  {:>11}  {:>11}  {:>12}  {:>7}  {:>14}  {:>6}\n", "label", label_w, "phase",
                   "peak_memory_mib", "avg_power_w", "wall_time_h", "energy_kwh", "images", "kwh_per_image", "lpips");
  for (const auto& r : report.runs) {
    const auto& m = r.metrics;
    t += fmt::format("{:<{}}  {:<9}  {:>15}  {:>11.1f}  {:>11.4f}  {:>12.6f}  {:>7}  {:>14.6f}  {:>6}\n", m.label,
                     label_w, to_string(m.phase), m.peak_memory_mib, m.avg_power_w, m.wall_time_h, m.energy_kwh,
                     m.images_generated, m.energy_per_image_kwh,
                     r.perceptual_score ? format_score(*r.perceptual_score) : std::string("-"));
  }
  for (const auto& pr : report.ratios) {
    t += fmt::format("\n[{}] ", to_string(pr.phase));
    t += ratios_to_text(pr.table);
  }
  if (report.provenance) {
    const auto& p = *report.provenance;
    t += fmt::format("\nprovenance\n  config_hash: {}\n  seed: {}\n  started_utc: {}\n  finished_utc: {}\n"
                     "  backend: {}\n  clock: {}\n",
                     p.config_hash, p.seed, p.started_utc, p.finished_utc, p.backend, p.clock);
  }
  if (!report.runs.empty()) {
    t += "\nsources\n";
    for (const auto& r : report.runs) {
      t += fmt::format("  {} {}: {} ({} samples, {} gaps)\n", r.metrics.label, to_string(r.metrics.phase),
                       r.trace_file, r.trace.samples.size(), r.trace.gaps.size());
    }
  }

  for (const auto& r : report.runs) out.plots.emplace_back(plot_name(r.metrics), power_memory_plot(r));
  const auto points = scatter_points(report);
  if (!points.empty()) out.plots.emplace_back("time_vs_score.svg", scatter_plot(points));
  return out;
}

void write_report(const BenchReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io_error, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  const auto rendered = render_report(report);
  write_text(dir / "report.txt", rendered.text);
  std::vector<RunMetrics> metrics;
  for (const auto& r : report.runs) metrics.push_back(r.metrics);
  write_text(dir / "metrics.csv", metrics_to_csv(metrics));
  write_text(dir / "scores.csv", scores_to_csv(report));
  for (const auto& pr : report.ratios) {
    write_text(dir / fmt::format("ratios-{}.csv", to_string(pr.phase)), ratios_to_csv(pr.table));
    write_text(dir / fmt::format("ratios-{}.txt", to_string(pr.phase)), ratios_to_text(pr.table));
  }
  for (const auto& [name, svg] : rendered.plots) write_text(dir / name, svg);
  if (report.provenance) {
    const auto& p = *report.provenance;
    write_text(dir / "provenance.ini",
               fmt::format("[provenance]\nconfig_hash = {}\nseed = {}\nstarted_utc = {}\nfinished_utc = {}\n"
                           "backend = {}\nclock = {}\ncomplete = {}\nfailure = {}\n",
                           p.config_hash, p.seed, p.started_utc, p.finished_utc, p.backend, p.clock,
                           report.complete ? "true" : "false", report.failure));
  }
}

BenchReport load_run_directory(const fs::path& dir, double interval_s) {
  BenchReport report;
  const auto rows = parse_metrics_csv(read_text(dir / "metrics.csv"));
  std::vector<std::tuple<std::string, WorkloadPhase, double>> scores;
  if (fs::exists(dir / "scores.csv")) {
    std::istringstream in(read_text(dir / "scores.csv"));
    std::string line;
    std::getline(in, line);
    if (line != kScoresCsvHeader) throw Error(Errc::schema_mismatch, "scores.csv has an unexpected header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto a = line.find(',');
      const auto b = line.find(',', a + 1);
      const auto phase = a == std::string::npos || b == std::string::npos
                             ? std::nullopt
                             : parse_phase(std::string_view(line).substr(a + 1, b - a - 1));
      if (!phase) throw Error(Errc::schema_mismatch, fmt::format("bad scores.csv row '{}'", line));
      try {
        scores.emplace_back(line.substr(0, a), *phase, std::stod(line.substr(b + 1)));
      } catch (const std::exception&) {
        throw Error(Errc::schema_mismatch, fmt::format("bad score in '{}'", line));
      }
    }
  }
  for (const auto& row : rows) {
    RunRecord rec;
    rec.trace_file = trace_file_name(row.label, row.phase);
    rec.trace = read_csv(dir / rec.trace_file, interval_s);
    rec.trace.label = row.label;
    rec.trace.phase = row.phase;
    rec.metrics = summarize(rec.trace, row.images_generated);
    rec.metrics.label = row.label;
    rec.metrics.phase = row.phase;
    for (const auto& [label, phase, score] : scores) {
      if (label == row.label && phase == row.phase) rec.perceptual_score = score;
    }
    report.runs.push_back(std::move(rec));
  }
  if (fs::exists(dir / "provenance.ini")) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::read_ini((dir / "provenance.ini").string(), tree);
      Provenance p;
      p.config_hash = tree.get<std::string>("provenance.config_hash", "");
      p.seed = tree.get<std::uint64_t>("provenance.seed", 0);
      p.started_utc = tree.get<std::string>("provenance.started_utc", "");
      p.finished_utc = tree.get<std::string>("provenance.finished_utc", "");
      p.backend = tree.get<std::string>("provenance.backend", "");
      p.clock = tree.get<std::string>("provenance.clock", "");
      report.complete = tree.get<std::string>("provenance.complete", "true") == "true";
      report.failure = tree.get<std::string>("provenance.failure", "");
      report.provenance = p;
    } catch (const boost::property_tree::ptree_error& e) {
      throw Error(Errc::schema_mismatch, fmt::format("provenance.ini: {}", e.what()));
    }
  }
  return report;
}

}  // namespace leafbench
