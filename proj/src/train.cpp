// SPDX-License-Identifier: Apache-2.0
#include "leafbench/train.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "leafbench/diffusion.hpp"
#include "leafbench/error.hpp"

namespace leafbench {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::invalid_range, msg); };
  if (!(learning_rate > 0.0)) fail(fmt::format("learning_rate must be positive, got {}", learning_rate));
  if (gradient_accumulation_steps < 1) fail("gradient_accumulation_steps must be >= 1");
  if (training_steps < 0) fail("training_steps must be >= 0");
  if (lr_warmup_steps < 0) fail("lr_warmup_steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (lr_schedule != "constant") fail(fmt::format("unsupported lr_schedule '{}'", lr_schedule));
  if (snr_gamma && !(*snr_gamma > 0.0)) fail("snr_gamma must be positive");
  if (text_encoder_lr && !(*text_encoder_lr > 0.0)) fail("text_encoder_lr must be positive");
  if (!(uncond_probability >= 0.0 && uncond_probability <= 1.0)) fail("uncond_probability outside [0, 1]");
  if (mode == FineTuneMode::lora && lora_rank < 1) fail("lora_rank must be >= 1");
}

AdamOptimizer::AdamOptimizer(std::size_t size) : m_(size, 0.0), v_(size, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grads, double lr) {
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw Error(Errc::shape_mismatch, "optimizer state does not match parameter count");
  }
  ++step_;
  const double correct1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double correct2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double m_hat = m_[i] / correct1;
    const double v_hat = v_[i] / correct2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

double learning_rate_at(const TrainConfig& config, int update) {
  if (config.lr_warmup_steps <= 0 || update >= config.lr_warmup_steps) return config.learning_rate;
  return config.learning_rate * static_cast<double>(update) / static_cast<double>(config.lr_warmup_steps);
}

TrainResult train(const Denoiser& model, std::span<const TrainExample> dataset, const NoiseSchedule& schedule,
                  const TrainConfig& config, const std::function<void(int update, double loss)>& on_update) {
  config.validate();
  if (dataset.empty()) throw Error(Errc::empty_dataset, "training needs at least one example");

  TrainResult result{model, {}};
  Denoiser& net = result.model;
  const bool lora = config.mode == FineTuneMode::lora;
  if (lora && !net.has_adapters()) {
    net.attach_lora(config.lora_rank, config.rng_seed ^ 0x9e3779b97f4a7c15ULL, config.lora_scale);
  }

  const auto& shape = net.shape();
  const std::vector<double> empty_cond(static_cast<std::size_t>(shape.cond_dim), 0.0);
  const std::size_t trainable = lora ? net.adapter_parameter_count() : net.parameter_count();
  AdamOptimizer adam(trainable);
  Gradients grads = net.make_gradients();
  std::vector<double> adapter_params = net.adapter_parameters();

  std::mt19937_64 rng(config.rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, schedule.num_steps());
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  const int per_update = config.gradient_accumulation_steps * config.batch_size;
  result.loss_history.reserve(static_cast<std::size_t>(config.training_steps));

  for (int update = 1; update <= config.training_steps; ++update) {
    grads.zero();
    double loss_sum = 0.0;
    for (int micro = 0; micro < config.gradient_accumulation_steps; ++micro) {
      for (int b = 0; b < config.batch_size; ++b) {
        const TrainExample& ex = dataset[pick(rng)];
        const int t = pick_t(rng);
        const bool drop_prompt = coin(rng) < config.uncond_probability;
        const ImageGrid eps = gaussian_grid(shape.channels, shape.height, shape.width, rng);
        const std::span<const double> cond = drop_prompt ? std::span<const double>(empty_cond)
                                                         : std::span<const double>(ex.cond);
        const double loss = training_loss_and_gradient(net, ex.image, t, eps, cond, schedule, config.snr_gamma, grads);
        if (!std::isfinite(loss)) {
          throw Error(Errc::non_finite,
                      fmt::format("loss became {} at update {} (micro-batch {}, element {}, t = {})", loss, update,
                                  micro, b, t));
        }
        loss_sum += loss;
      }
    }
    grads.scale(1.0 / per_update);
    const double lr = learning_rate_at(config, update);
    if (lora) {
      adam.step(adapter_params, grads.adapters, lr);
      net.set_adapter_parameters(adapter_params);
    } else {
      adam.step(net.parameters(), grads.base, lr);
    }
    const double mean_loss = loss_sum / per_update;
    result.loss_history.push_back(mean_loss);
    if (on_update) on_update(update, mean_loss);
  }
  return result;
}

}  // namespace leafbench
