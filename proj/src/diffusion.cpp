// SPDX-License-Identifier: Apache-2.0
#include "leafbench/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

ImageGrid forward_noise(const ImageGrid& x0, const ImageGrid& eps, double alpha_bar) {
  require_same_shape(x0, eps, "forward_noise");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) {
    throw Error(Errc::invalid_range, fmt::format("alpha_bar {} outside [0, 1]", alpha_bar));
  }
  const double signal = std::sqrt(alpha_bar);
  const double noise = std::sqrt(1.0 - alpha_bar);
  ImageGrid out(x0.channels(), x0.height(), x0.width());
  auto o = out.values();
  auto a = x0.values();
  auto e = eps.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = signal * a[i] + noise * e[i];
  return out;
}

ImageGrid forward_noise(const ImageGrid& x0, int t, const ImageGrid& eps, const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_noise");
  return forward_noise(x0, eps, schedule.alpha_bar(t));
}

ImageGrid predict_noise(const Denoiser& model, const ImageGrid& xt, int t, std::span<const double> cond) {
  return model.predict(xt, t, cond);
}

double mse_loss(const ImageGrid& predicted, const ImageGrid& eps, double weight) {
  require_same_shape(predicted, eps, "mse_loss");
  double sum = 0.0;
  auto p = predicted.values();
  auto e = eps.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - e[i];
    sum += d * d;
  }
  return weight * sum / static_cast<double>(p.size());
}

double loss_weight(const NoiseSchedule& schedule, int t, std::optional<double> snr_gamma) {
  if (!snr_gamma) {
    schedule.alpha_bar(t);  // range check only
    return 1.0;
  }
  return schedule.min_snr_weight(t, *snr_gamma);
}

double training_loss(const Denoiser& model, const ImageGrid& x0, int t, const ImageGrid& eps,
                     std::span<const double> cond, const NoiseSchedule& schedule, std::optional<double> snr_gamma) {
  const ImageGrid xt = forward_noise(x0, t, eps, schedule);
  return mse_loss(model.predict(xt, t, cond), eps, loss_weight(schedule, t, snr_gamma));
}

double training_loss_and_gradient(const Denoiser& model, const ImageGrid& x0, int t, const ImageGrid& eps,
                                  std::span<const double> cond, const NoiseSchedule& schedule,
                                  std::optional<double> snr_gamma, Gradients& grads) {
  const ImageGrid xt = forward_noise(x0, t, eps, schedule);
  return model.loss_and_gradient(xt, t, cond, eps, loss_weight(schedule, t, snr_gamma), grads);
}

ImageGrid guide(const ImageGrid& eps_uncond, const ImageGrid& eps_cond, double scale) {
  require_same_shape(eps_uncond, eps_cond, "guidance");
  if (scale == 1.0) return eps_cond;
  if (scale == 0.0) return eps_uncond;
  ImageGrid out(eps_cond.channels(), eps_cond.height(), eps_cond.width());
  auto o = out.values();
  auto u = eps_uncond.values();
  auto c = eps_cond.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = u[i] + scale * (c[i] - u[i]);
  return out;
}

std::vector<int> inference_timesteps(int num_train_steps, int num_inference_steps) {
  if (num_inference_steps < 1) {
    throw Error(Errc::invalid_step_count, fmt::format("need at least one inference step, got {}", num_inference_steps));
  }
  if (num_inference_steps > num_train_steps) {
    throw Error(Errc::invalid_step_count, fmt::format("{} inference steps exceed the {}-step schedule",
                                                      num_inference_steps, num_train_steps));
  }
  std::vector<int> steps;
  steps.reserve(static_cast<std::size_t>(num_inference_steps));
  for (int i = num_inference_steps; i >= 1; --i) {
    const long long num = static_cast<long long>(i) * num_train_steps;
    steps.push_back(static_cast<int>((num + num_inference_steps - 1) / num_inference_steps));
  }
  return steps;
}

ImageGrid sample(const NoiseFn& predictor, int channels, int height, int width, const NoiseSchedule& schedule,
                 std::span<const double> prompt_cond, std::span<const double> uncond, const SampleOptions& options,
                 const std::function<void(int step)>& on_step) {
  if (!(options.guidance_scale >= 0.0)) {
    throw Error(Errc::invalid_range, fmt::format("guidance scale must be >= 0, got {}", options.guidance_scale));
  }
  const std::vector<int> steps = inference_timesteps(schedule.num_steps(), options.num_inference_steps);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ImageGrid x = gaussian_grid(channels, height, width, rng);

  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = i + 1 < steps.size() ? schedule.alpha_bar(steps[i + 1]) : 1.0;
    const double alpha_step = ab_t / ab_prev;
    const double beta_step = 1.0 - alpha_step;

    ImageGrid eps;
    if (options.guidance_scale == 1.0) {
      eps = predictor(x, t, prompt_cond);
    } else if (options.guidance_scale == 0.0) {
      eps = predictor(x, t, uncond);
    } else {
      eps = guide(predictor(x, t, uncond), predictor(x, t, prompt_cond), options.guidance_scale);
    }
    require_same_shape(x, eps, "predictor output");

    const double eps_coef = beta_step / std::sqrt(1.0 - ab_t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_step);
    const bool last = i + 1 == steps.size();
    const double sigma = last ? 0.0 : std::sqrt(beta_step * (1.0 - ab_prev) / (1.0 - ab_t));
    auto xv = x.values();
    auto ev = eps.values();
    for (std::size_t j = 0; j < xv.size(); ++j) {
      xv[j] = inv_sqrt_alpha * (xv[j] - eps_coef * ev[j]);
      if (!last) xv[j] += sigma * normal(rng);
    }
    x.check_finite();
    if (on_step) on_step(static_cast<int>(i) + 1);
  }
  for (double& v : x.values()) v = std::clamp(v, -1.0, 1.0);
  return x;
}

ImageGrid sample(const Denoiser& model, const NoiseSchedule& schedule, std::span<const double> prompt_cond,
                 std::span<const double> uncond, const SampleOptions& options,
                 const std::function<void(int step)>& on_step) {
  const auto& s = model.shape();
  NoiseFn fn = [&model](const ImageGrid& xt, int t, std::span<const double> cond) {
    return model.predict(xt, t, cond);
  };
  return sample(fn, s.channels, s.height, s.width, schedule, prompt_cond, uncond, options, on_step);
}

}  // namespace leafbench
