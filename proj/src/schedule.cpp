// SPDX-License-Identifier: Apache-2.0
#include "leafbench/schedule.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

NoiseSchedule make_schedule(int num_steps, double beta_start, double beta_end) {
  if (num_steps < 1) {
    throw Error(Errc::invalid_range, fmt::format("num_steps must be >= 1, got {}", num_steps));
  }
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw Error(Errc::invalid_range,
                fmt::format("need 0 < beta_start <= beta_end < 1, got {} and {}", beta_start, beta_end));
  }
  NoiseSchedule schedule;
  schedule.beta_start_ = beta_start;
  schedule.beta_end_ = beta_end;
  schedule.alpha_bar_.resize(static_cast<std::size_t>(num_steps));
  double product = 1.0;
  for (int i = 0; i < num_steps; ++i) {
    // Each beta depends only on its index, so the ramp is order-independent.
    const double beta = num_steps == 1
                            ? beta_start
                            : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                               static_cast<double>(num_steps - 1);
    product *= 1.0 - beta;
    schedule.alpha_bar_[static_cast<std::size_t>(i)] = product;
  }
  return schedule;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 1 || t > num_steps()) {
    throw Error(Errc::step_out_of_range, fmt::format("step {} outside [1, {}]", t, num_steps()));
  }
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::min_snr_weight(int t, double gamma) const {
  return leafbench::min_snr_weight(alpha_bar(t), gamma);
}

double min_snr_weight(double alpha_bar, double gamma) {
  if (!(gamma > 0.0)) {
    throw Error(Errc::invalid_range, fmt::format("snr gamma must be positive, got {}", gamma));
  }
  // Limits of min(snr, g) / snr at the two ends of the range.
  if (alpha_bar >= 1.0) return 0.0;
  if (alpha_bar <= 0.0) return 1.0;
  const double snr = alpha_bar / (1.0 - alpha_bar);
  return std::min(snr, gamma) / snr;
}

}  // namespace leafbench
