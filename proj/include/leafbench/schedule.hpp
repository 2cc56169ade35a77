// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace leafbench {

/// Cumulative signal-retention coefficients alpha_bar[t], t = 1..T.
///
/// alpha_bar is the running product of (1 - beta_s) for a linear beta ramp,
/// so x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int num_steps() const noexcept { return static_cast<int>(alpha_bar_.size()); }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  /// 1-based; throws Errc::step_out_of_range outside [1, T].
  double alpha_bar(int t) const;
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

  /// min(SNR, gamma) / SNR with SNR = alpha_bar / (1 - alpha_bar).
  double min_snr_weight(int t, double gamma) const;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  friend NoiseSchedule make_schedule(int, double, double);

  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> alpha_bar_;
};

inline constexpr int kDefaultScheduleSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// Linear beta ramp from beta_start to beta_end over num_steps.
/// Requires 0 < beta_start <= beta_end < 1 and num_steps >= 1.
NoiseSchedule make_schedule(int num_steps = kDefaultScheduleSteps,
                            double beta_start = kDefaultBetaStart,
                            double beta_end = kDefaultBetaEnd);

/// Min-SNR weight for a bare alpha_bar value.
double min_snr_weight(double alpha_bar, double gamma);

}  // namespace leafbench
