// SPDX-License-Identifier: Apache-2.0
// Helpers shared by the unit tests and the acceptance runner.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "leafbench/denoiser.hpp"
#include "leafbench/diffusion.hpp"
#include "leafbench/image_grid.hpp"
#include "leafbench/schedule.hpp"
#include "leafbench/telemetry.hpp"

namespace leafbench::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("leafbench-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ImageGrid random_grid(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gaussian_grid(c, h, w, rng);
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

/// Small network for finite-difference checks.
inline DenoiserShape tiny_shape() { return DenoiserShape{3, 8, 8, 4, 8, 4}; }

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps parameters
/// whose true gradient is ~0 from dominating through roundoff alone.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares every analytic gradient entry (base and adapters) with a central
/// difference of step h on the weighted training loss.
inline GradientCheck check_gradients(Denoiser model, const NoiseSchedule& schedule, std::uint64_t seed,
                                     std::optional<double> gamma = 5.0, double h = 1e-5) {
  const auto& s = model.shape();
  const ImageGrid x0 = random_grid(s.channels, s.height, s.width, seed);
  const ImageGrid eps = random_grid(s.channels, s.height, s.width, seed + 1);
  const auto cond = random_vector(static_cast<std::size_t>(s.cond_dim), seed + 2);
  const int t = 1 + static_cast<int>(seed % static_cast<std::uint64_t>(schedule.num_steps()));

  Gradients grads = model.make_gradients();
  training_loss_and_gradient(model, x0, t, eps, cond, schedule, gamma, grads);

  GradientCheck result;
  auto note = [&](double a, double n, const std::string& where) {
    const double e = relative_error(a, n);
    ++result.checked;
    if (e > result.max_relative_error) {
      result.max_relative_error = e;
      result.worst = where;
    }
  };

  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = training_loss(model, x0, t, eps, cond, schedule, gamma);
    params[i] = saved - h;
    const double down = training_loss(model, x0, t, eps, cond, schedule, gamma);
    params[i] = saved;
    note(grads.base[i], (up - down) / (2 * h), "base[" + std::to_string(i) + "]");
  }

  auto flat = model.adapter_parameters();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double saved = flat[i];
    flat[i] = saved + h;
    model.set_adapter_parameters(flat);
    const double up = training_loss(model, x0, t, eps, cond, schedule, gamma);
    flat[i] = saved - h;
    model.set_adapter_parameters(flat);
    const double down = training_loss(model, x0, t, eps, cond, schedule, gamma);
    flat[i] = saved;
    model.set_adapter_parameters(flat);
    note(grads.adapters[i], (up - down) / (2 * h), "adapter[" + std::to_string(i) + "]");
  }
  return result;
}

/// Tiny denoiser with adapters whose B is randomized so A gets a gradient.
inline Denoiser tiny_model_with_lora(std::uint64_t seed) {
  Denoiser model(tiny_shape(), seed);
  model.attach_lora(2, seed + 7);
  auto flat = model.adapter_parameters();
  const auto noise = random_vector(flat.size(), seed + 9);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += 0.3 * noise[i];
  model.set_adapter_parameters(flat);
  return model;
}

inline Trace constant_trace(const std::string& label, int seconds, long memory_mib, double power_w) {
  Trace trace;
  trace.label = label;
  for (int i = 0; i <= seconds; ++i) {
    trace.samples.push_back({static_cast<double>(i), "2026-01-01T00:00:00.000Z", memory_mib, power_w, 90});
  }
  return trace;
}

/// Trace whose trapezoid-average power is exactly mean_power_w and whose
/// peak memory is peak_mib. Power zigzags m, m+d, m, m-d over each 4 s, so
/// seconds must be a multiple of 4; memory ramps up over the first 10 s.
inline Trace shaped_trace(const std::string& label, WorkloadPhase phase, int seconds, double mean_power_w,
                          long peak_mib) {
  Trace trace;
  trace.label = label;
  trace.phase = phase;
  const double zig[4] = {0.0, 12.5, 0.0, -12.5};
  for (int i = 0; i <= seconds; ++i) {
    const long mem = i >= 10 ? peak_mib : peak_mib / 2 + (peak_mib - peak_mib / 2) * i / 10;
    trace.samples.push_back({static_cast<double>(i), "2026-01-01T00:00:00.000Z", mem, mean_power_w + zig[i % 4], 97});
  }
  return trace;
}

struct ReferenceRun {
  const char* label;
  WorkloadPhase phase;
  int seconds;
  double power_w;
  long memory_mib;
  std::optional<double> score;
};

/// Reference figures for three fine-tuned variants. Training power and
/// memory, the SDXL/SD3.5M durations (2.23 h, 1.25 h, 1.06 h, 1.5 x 1.06 h)
/// and SD3.5L inference (2.2 x SD3.5M) are the comparison targets; SD3.5L
/// training time and inference power are placeholders no check reads.
inline std::vector<ReferenceRun> reference_runs() {
  using P = WorkloadPhase;
  return {
      {"SDXL", P::training, 8028, 221.0, 44640, std::nullopt},
      {"SD3.5M", P::training, 4500, 167.4, 19338, std::nullopt},
      {"SD3.5L", P::training, 3600, 226.4, 31644, std::nullopt},
      {"SDXL", P::inference, 3816, 200.0, 47000, 0.35},
      {"SD3.5M", P::inference, 5724, 180.0, 17383, 0.34},
      {"SD3.5L", P::inference, 12592, 220.0, 42700, std::nullopt},
  };
}

}  // namespace leafbench::testing
