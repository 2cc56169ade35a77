// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "leafbench/denoiser.hpp"
#include "leafbench/image_grid.hpp"
#include "leafbench/schedule.hpp"

namespace leafbench {

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps, elementwise.
/// alpha_bar may be any value in [0, 1] here, including both endpoints.
ImageGrid forward_noise(const ImageGrid& x0, const ImageGrid& eps, double alpha_bar);

/// Same, with alpha_bar looked up at step t (1-based).
ImageGrid forward_noise(const ImageGrid& x0, int t, const ImageGrid& eps, const NoiseSchedule& schedule);

/// Wraps Denoiser::predict with the argument order used throughout the docs.
ImageGrid predict_noise(const Denoiser& model, const ImageGrid& xt, int t, std::span<const double> cond);

/// Per-element mean of squared noise error, times the Min-SNR weight when a
/// gamma is given (unit weight otherwise).
double mse_loss(const ImageGrid& predicted, const ImageGrid& eps, double weight = 1.0);

double loss_weight(const NoiseSchedule& schedule, int t, std::optional<double> snr_gamma);

double training_loss(const Denoiser& model, const ImageGrid& x0, int t, const ImageGrid& eps,
                     std::span<const double> cond, const NoiseSchedule& schedule,
                     std::optional<double> snr_gamma = std::nullopt);

/// Loss as above, with its gradient accumulated into grads.
double training_loss_and_gradient(const Denoiser& model, const ImageGrid& x0, int t, const ImageGrid& eps,
                                  std::span<const double> cond, const NoiseSchedule& schedule,
                                  std::optional<double> snr_gamma, Gradients& grads);

/// Classifier-free guidance: eps_u + s * (eps_c - eps_u). The identities at
/// s = 0 and s = 1 are returned verbatim, without floating-point round-off.
ImageGrid guide(const ImageGrid& eps_uncond, const ImageGrid& eps_cond, double scale);

using NoiseFn = std::function<ImageGrid(const ImageGrid& xt, int t, std::span<const double> cond)>;

struct SampleOptions {
  int num_inference_steps = 50;
  double guidance_scale = 2.5;
  std::uint64_t seed = 0;
};

/// Inference timesteps, descending: ceil(i * T / S) for i = S..1.
std::vector<int> inference_timesteps(int num_train_steps, int num_inference_steps);

/// Ancestral DDPM sampling from unit Gaussian noise with classifier-free
/// guidance. The result is clamped to [-1, 1] after the last step only.
/// on_step, when set, is called after every reverse step.
ImageGrid sample(const NoiseFn& predictor, int channels, int height, int width, const NoiseSchedule& schedule,
                 std::span<const double> prompt_cond, std::span<const double> uncond, const SampleOptions& options,
                 const std::function<void(int step)>& on_step = {});

ImageGrid sample(const Denoiser& model, const NoiseSchedule& schedule, std::span<const double> prompt_cond,
                 std::span<const double> uncond, const SampleOptions& options,
                 const std::function<void(int step)>& on_step = {});

/// Unit Gaussian grid drawn from rng.
template <typename Rng>
ImageGrid gaussian_grid(int channels, int height, int width, Rng& rng);

}  // namespace leafbench

#include <random>

namespace leafbench {

template <typename Rng>
ImageGrid gaussian_grid(int channels, int height, int width, Rng& rng) {
  ImageGrid grid(channels, height, width);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : grid.values()) v = normal(rng);
  return grid;
}

}  // namespace leafbench
