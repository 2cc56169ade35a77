// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "leafbench/linalg.hpp"

namespace leafbench {

enum class Projection { query, key, value };

std::string_view projection_name(Projection p) noexcept;
std::optional<Projection> parse_projection(std::string_view name) noexcept;

/// Low-rank update dW = scale * A * B for one attention projection.
///
/// Vectors are rows and multiply from the left: y = x W, with W of shape
/// (d_in, d_out). Hence A is (d_in, rank) and B is (rank, d_out).
struct LoraAdapter {
  Projection target = Projection::query;
  Matrix a;  // d_in x rank
  Matrix b;  // rank x d_out
  double scale = 1.0;

  int d_in() const noexcept { return static_cast<int>(a.rows()); }
  int d_out() const noexcept { return static_cast<int>(b.cols()); }
  int rank() const noexcept { return static_cast<int>(a.cols()); }
  long trainable_parameters() const noexcept { return a.size() + b.size(); }
};

/// A ~ N(0, 1/rank), B = 0. Requires rank < min(d_in, d_out).
LoraAdapter init_lora(int d_in, int d_out, int rank, std::uint64_t seed,
                      Projection target = Projection::query, double scale = 1.0);

/// x (W + scale A B), evaluated as x W + scale (x A) B.
RowVector adapted_forward(const Matrix& base_weight, const LoraAdapter& adapter, const RowVector& x);

/// Batched form: each row of xs is one input.
Matrix adapted_forward(const Matrix& base_weight, const LoraAdapter& adapter, const Matrix& xs);

/// W + scale A B as a dense matrix.
Matrix merge_lora(const Matrix& base_weight, const LoraAdapter& adapter);

}  // namespace leafbench
