// SPDX-License-Identifier: Apache-2.0
#include "leafbench/lora.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

std::string_view projection_name(Projection p) noexcept {
  switch (p) {
    case Projection::query: return "q";
    case Projection::key: return "k";
    case Projection::value: return "v";
  }
  return "?";
}

std::optional<Projection> parse_projection(std::string_view name) noexcept {
  if (name == "q") return Projection::query;
  if (name == "k") return Projection::key;
  if (name == "v") return Projection::value;
  return std::nullopt;
}

LoraAdapter init_lora(int d_in, int d_out, int rank, std::uint64_t seed, Projection target, double scale) {
  if (d_in <= 0 || d_out <= 0) {
    throw Error(Errc::dimension_mismatch, fmt::format("adapter dims must be positive, got {}x{}", d_in, d_out));
  }
  if (rank < 1 || rank >= std::min(d_in, d_out)) {
    throw Error(Errc::rank_too_large,
                fmt::format("rank {} must satisfy 1 <= rank < min({}, {})", rank, d_in, d_out));
  }
  LoraAdapter adapter;
  adapter.target = target;
  adapter.scale = scale;
  adapter.a.resize(d_in, rank);
  adapter.b = Matrix::Zero(rank, d_out);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
  for (Eigen::Index i = 0; i < adapter.a.size(); ++i) adapter.a.data()[i] = normal(rng);
  return adapter;
}

namespace {

void check_conform(const Matrix& w, const LoraAdapter& adapter) {
  if (adapter.a.cols() != adapter.b.rows() || w.rows() != adapter.a.rows() ||
      w.cols() != adapter.b.cols()) {
    throw Error(Errc::dimension_mismatch,
                fmt::format("base {}x{} vs adapter A {}x{}, B {}x{}", w.rows(), w.cols(), adapter.a.rows(),
                            adapter.a.cols(), adapter.b.rows(), adapter.b.cols()));
  }
}

}  // namespace

Matrix adapted_forward(const Matrix& base_weight, const LoraAdapter& adapter, const Matrix& xs) {
  check_conform(base_weight, adapter);
  if (xs.cols() != base_weight.rows()) {
    throw Error(Errc::dimension_mismatch,
                fmt::format("input width {} vs weight rows {}", xs.cols(), base_weight.rows()));
  }
  Matrix out = xs * base_weight;
  // A zero update is skipped outright so the result stays bitwise equal to
  // the base projection (adding +0.0 would flip the sign of -0.0 entries).
  if (adapter.scale != 0.0 && !adapter.b.isZero(0.0)) {
    Matrix low = xs * adapter.a;
    out.noalias() += adapter.scale * (low * adapter.b);
  }
  return out;
}

RowVector adapted_forward(const Matrix& base_weight, const LoraAdapter& adapter, const RowVector& x) {
  Matrix xs = x;
  Matrix out = adapted_forward(base_weight, adapter, xs);
  return out.row(0);
}

Matrix merge_lora(const Matrix& base_weight, const LoraAdapter& adapter) {
  check_conform(base_weight, adapter);
  Matrix merged = base_weight;
  if (adapter.scale != 0.0 && !adapter.b.isZero(0.0)) {
    merged.noalias() += adapter.scale * (adapter.a * adapter.b);
  }
  return merged;
}

}  // namespace leafbench
