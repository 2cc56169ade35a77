// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leafbench/denoiser.hpp"
#include "leafbench/image_grid.hpp"
#include "leafbench/schedule.hpp"

namespace leafbench {

enum class FineTuneMode { full, lora };

/// Fine-tuning hyperparameters. Defaults follow the reference run; fields
/// marked "echoed" are recorded in checkpoints but have no effect here.
struct TrainConfig {
  double learning_rate = 1e-4;
  int gradient_accumulation_steps = 4;
  int training_steps = 2000;
  int lr_warmup_steps = 10;
  std::string lr_schedule = "constant";
  std::optional<double> snr_gamma = 5.0;
  std::optional<double> text_encoder_lr = 5e-6;  // echoed: no trainable text encoder
  int batch_size = 1;
  std::uint64_t rng_seed = 0;

  FineTuneMode mode = FineTuneMode::full;
  int lora_rank = 4;
  double lora_scale = 1.0;
  /// Fraction of micro-batch examples whose prompt is replaced by the empty
  /// conditioning, so the unconditional branch used for guidance is trained.
  double uncond_probability = 0.1;

  int resolution = 1024;           // echoed
  int max_sequence_length = 100;   // echoed
  std::string mixed_precision = "fp16";  // echoed
  std::string optimizer = "adam8bit";    // echoed; plain Adam is used
  bool gradient_checkpointing = true;    // echoed

  /// Throws Errc::invalid_range on non-positive rates or step counts.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainExample {
  ImageGrid image;
  std::vector<double> cond;
};

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::size_t size);

  void step(std::span<double> params, std::span<const double> grads, double lr);
  long steps_taken() const noexcept { return step_; }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  long step_ = 0;
};

/// Linear warmup 0 -> lr over warmup steps, then constant. update is 1-based.
double learning_rate_at(const TrainConfig& config, int update);

struct TrainResult {
  Denoiser model;
  std::vector<double> loss_history;  // one entry per optimizer update
};

/// Draws (example, t, eps) for every micro-batch element from one seeded
/// stream, averages gradients over gradient_accumulation_steps * batch_size
/// elements and applies one Adam update per training step. In lora mode
/// adapters are attached (if absent) and only they are updated.
TrainResult train(const Denoiser& model, std::span<const TrainExample> dataset, const NoiseSchedule& schedule,
                  const TrainConfig& config, const std::function<void(int update, double loss)>& on_update = {});

}  // namespace leafbench
