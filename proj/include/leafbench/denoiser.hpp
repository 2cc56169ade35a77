// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leafbench/image_grid.hpp"
#include "leafbench/lora.hpp"

namespace leafbench {

struct DenoiserShape {
  int channels = 3;
  int height = 32;
  int width = 32;
  int hidden = 32;
  int cond_dim = 64;
  int time_dim = 16;

  friend bool operator==(const DenoiserShape&, const DenoiserShape&) = default;
};

/// One named slice of the flat parameter vector.
struct ParameterBlock {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

/// Gradient accumulator matching a Denoiser's trainable layout.
struct Gradients {
  std::vector<double> base;
  std::vector<double> adapters;

  void zero();
  void scale(double factor);
};

/// Noise predictor eps_theta(x_t, t, cond).
///
/// Layout: 3x3 conv in (plus per-channel time and prompt biases), SiLU,
/// 2x2 average pool into tokens, single-head self-attention with Q/K/V/out
/// projections, nearest upsample added back as a residual, 3x3 conv, SiLU,
/// 3x3 conv out. Height and width must be even.
class Denoiser {
 public:
  Denoiser(const DenoiserShape& shape, std::uint64_t seed, bool zero_init_output = false);

  /// Rebuilds a network from a stored flat parameter vector.
  static Denoiser from_parameters(const DenoiserShape& shape, std::vector<double> parameters);

  const DenoiserShape& shape() const noexcept { return shape_; }
  const std::vector<ParameterBlock>& manifest() const noexcept { return manifest_; }
  const ParameterBlock& block(std::string_view name) const;

  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  /// Attaches a fresh adapter (B = 0) to each attention projection.
  void attach_lora(int rank, std::uint64_t seed, double scale = 1.0);
  void set_adapter(LoraAdapter adapter);
  const std::optional<LoraAdapter>& adapter(Projection p) const noexcept {
    return adapters_[static_cast<std::size_t>(p)];
  }
  bool has_adapters() const noexcept;
  std::size_t adapter_parameter_count() const noexcept;
  /// Flattened as A then B for q, k, v in that order (attached ones only).
  std::vector<double> adapter_parameters() const;
  void set_adapter_parameters(std::span<const double> flat);
  /// Folds every adapter into its base projection and detaches it.
  void merge_adapters();

  /// Dense base projection weight (hidden x hidden).
  Matrix projection_weight(Projection p) const;

  Gradients make_gradients() const;

  ImageGrid predict(const ImageGrid& xt, int t, std::span<const double> cond) const;

  /// Returns weight * mean((eps_hat - eps)^2) and adds its gradient into grads.
  double loss_and_gradient(const ImageGrid& xt, int t, std::span<const double> cond,
                           const ImageGrid& eps, double weight, Gradients& grads) const;

 private:
  Denoiser() = default;
  void build_manifest();
  void check_inputs(const ImageGrid& xt, std::span<const double> cond) const;

  DenoiserShape shape_;
  std::vector<ParameterBlock> manifest_;
  std::vector<double> params_;
  std::array<std::optional<LoraAdapter>, 3> adapters_;
};

/// Sinusoidal embedding of the step index (dim must be even).
std::vector<double> timestep_embedding(int t, int dim);

}  // namespace leafbench
