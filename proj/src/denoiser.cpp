// SPDX-License-Identifier: Apache-2.0
#include "leafbench/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "leafbench/error.hpp"

namespace leafbench {

namespace {

constexpr int kTaps = 9;  // 3x3 kernels throughout

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double silu(double v) { return v * sigmoid(v); }

// exp(d) below ~1e-28 is dropped; left in, it decays into subnormals that
// slow every later product by an order of magnitude.
double softmax_term(double d) { return d < -64.0 ? 0.0 : std::exp(d); }

double silu_grad(double v) {
  const double s = sigmoid(v);
  return s * (1.0 + v * (1.0 - s));
}

// Zero-padded patches: row (c * 9 + ky * 3 + kx), column (y * w + x).
Matrix im2col(const Matrix& in, int h, int w) {
  const auto channels = static_cast<int>(in.rows());
  Matrix cols = Matrix::Zero(channels * kTaps, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * kTaps + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            cols(row, y * w + x) = in(c, sy * w + sx);
          }
        }
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& cols, int channels, int h, int w) {
  Matrix out = Matrix::Zero(channels, static_cast<Eigen::Index>(h) * w);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = c * kTaps + ky * 3 + kx;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            out(c, sy * w + sx) += cols(row, y * w + x);
          }
        }
      }
    }
  }
  return out;
}

// Intermediate activations kept for the backward pass.
struct Pass {
  std::vector<double> temb;
  Matrix cols_in;
  Matrix h0;  // pre-activation, hidden x HW
  Matrix a0;
  Matrix tokens;  // N x hidden, 2x2 average pooled a0
  std::array<Matrix, 3> proj;  // q, k, v
  Matrix attn;
  Matrix mixed;  // attn * v
  Matrix z;      // mixed * W_out
  Matrix cols_mid;
  Matrix m;  // pre-activation of conv_mid
  Matrix h2;
  Matrix cols_out;
  Matrix out;  // channels x HW
};

}  // namespace

void Gradients::zero() {
  std::fill(base.begin(), base.end(), 0.0);
  std::fill(adapters.begin(), adapters.end(), 0.0);
}

void Gradients::scale(double factor) {
  for (double& g : base) g *= factor;
  for (double& g : adapters) g *= factor;
}

std::vector<double> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw Error(Errc::dimension_mismatch, fmt::format("time embedding dim must be even, got {}", dim));
  }
  const int half = dim / 2;
  std::vector<double> emb(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    emb[static_cast<std::size_t>(i)] = std::sin(t * freq);
    emb[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
  }
  return emb;
}

Denoiser::Denoiser(const DenoiserShape& shape, std::uint64_t seed, bool zero_init_output) : shape_(shape) {
  build_manifest();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& block : manifest_) {
    const bool is_bias = block.shape.size() == 1;
    if (is_bias) continue;  // biases start at zero
    int fan_in = block.shape[1];
    if (block.shape.size() == 4) fan_in = block.shape[1] * kTaps;
    if (block.name.starts_with("time_proj") || block.name.starts_with("cond_proj")) fan_in = block.shape[0];
    double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
    if (block.name == "conv_out.weight") {
      if (zero_init_output) continue;
      std *= 0.1;
    }
    for (std::size_t i = 0; i < block.count; ++i) params_[block.offset + i] = std * normal(rng);
  }
}

Denoiser Denoiser::from_parameters(const DenoiserShape& shape, std::vector<double> parameters) {
  Denoiser model;
  model.shape_ = shape;
  model.build_manifest();
  if (parameters.size() != model.params_.size()) {
    throw Error(Errc::shape_mismatch, fmt::format("manifest expects {} parameters, got {}",
                                                  model.params_.size(), parameters.size()));
  }
  model.params_ = std::move(parameters);
  return model;
}

void Denoiser::build_manifest() {
  const auto& s = shape_;
  if (s.channels < 1 || s.hidden < 1 || s.cond_dim < 1 || s.height < 2 || s.width < 2 ||
      s.height % 2 != 0 || s.width % 2 != 0 || s.time_dim < 2 || s.time_dim % 2 != 0) {
    throw Error(Errc::dimension_mismatch,
                fmt::format("invalid denoiser shape c={} h={} w={} hidden={} cond={} time={}", s.channels,
                            s.height, s.width, s.hidden, s.cond_dim, s.time_dim));
  }
  manifest_.clear();
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<int> dims) {
    std::size_t count = 1;
    for (int d : dims) count *= static_cast<std::size_t>(d);
    manifest_.push_back({std::move(name), std::move(dims), offset, count});
    offset += count;
  };
  add("conv_in.weight", {s.hidden, s.channels, 3, 3});
  add("conv_in.bias", {s.hidden});
  add("time_proj.weight", {s.time_dim, s.hidden});
  add("cond_proj.weight", {s.cond_dim, s.hidden});
  add("attn.q", {s.hidden, s.hidden});
  add("attn.k", {s.hidden, s.hidden});
  add("attn.v", {s.hidden, s.hidden});
  add("attn.out", {s.hidden, s.hidden});
  add("conv_mid.weight", {s.hidden, s.hidden, 3, 3});
  add("conv_mid.bias", {s.hidden});
  add("conv_out.weight", {s.channels, s.hidden, 3, 3});
  add("conv_out.bias", {s.channels});
  params_.assign(offset, 0.0);
}

const ParameterBlock& Denoiser::block(std::string_view name) const {
  for (const auto& b : manifest_) {
    if (b.name == name) return b;
  }
  throw Error(Errc::schema_mismatch, fmt::format("no parameter block named '{}'", name));
}

namespace {

const char* projection_block(Projection p) {
  switch (p) {
    case Projection::query: return "attn.q";
    case Projection::key: return "attn.k";
    case Projection::value: return "attn.v";
  }
  return "";
}

// Views a parameter block as a 2-D matrix, folding trailing dims into columns.
template <typename Ptr>
auto block_map(Ptr data, const ParameterBlock& b) {
  const Eigen::Index rows = b.shape[0];
  const Eigen::Index cols = static_cast<Eigen::Index>(b.count) / rows;
  if constexpr (std::is_const_v<std::remove_pointer_t<Ptr>>) {
    return ConstMatrixMap(data + b.offset, rows, cols);
  } else {
    return MatrixMap(data + b.offset, rows, cols);
  }
}

}  // namespace

Matrix Denoiser::projection_weight(Projection p) const {
  return block_map(params_.data(), block(projection_block(p)));
}

void Denoiser::attach_lora(int rank, std::uint64_t seed, double scale) {
  for (Projection p : {Projection::query, Projection::key, Projection::value}) {
    // Distinct streams per projection.
    set_adapter(init_lora(shape_.hidden, shape_.hidden, rank, seed + static_cast<std::uint64_t>(p) * 7919u, p,
                          scale));
  }
}

void Denoiser::set_adapter(LoraAdapter adapter) {
  if (adapter.d_in() != shape_.hidden || adapter.d_out() != shape_.hidden || adapter.b.rows() != adapter.rank()) {
    throw Error(Errc::dimension_mismatch,
                fmt::format("adapter {}x{} rank {} does not fit hidden width {}", adapter.d_in(),
                            adapter.d_out(), adapter.rank(), shape_.hidden));
  }
  const auto slot = static_cast<std::size_t>(adapter.target);
  adapters_[slot] = std::move(adapter);
}

bool Denoiser::has_adapters() const noexcept {
  return std::any_of(adapters_.begin(), adapters_.end(), [](const auto& a) { return a.has_value(); });
}

std::size_t Denoiser::adapter_parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& a : adapters_) {
    if (a) n += static_cast<std::size_t>(a->trainable_parameters());
  }
  return n;
}

std::vector<double> Denoiser::adapter_parameters() const {
  std::vector<double> flat;
  flat.reserve(adapter_parameter_count());
  for (const auto& a : adapters_) {
    if (!a) continue;
    flat.insert(flat.end(), a->a.data(), a->a.data() + a->a.size());
    flat.insert(flat.end(), a->b.data(), a->b.data() + a->b.size());
  }
  return flat;
}

void Denoiser::set_adapter_parameters(std::span<const double> flat) {
  if (flat.size() != adapter_parameter_count()) {
    throw Error(Errc::shape_mismatch, fmt::format("adapter layout expects {} values, got {}",
                                                  adapter_parameter_count(), flat.size()));
  }
  std::size_t at = 0;
  for (auto& a : adapters_) {
    if (!a) continue;
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), a->a.size(), a->a.data());
    at += static_cast<std::size_t>(a->a.size());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), a->b.size(), a->b.data());
    at += static_cast<std::size_t>(a->b.size());
  }
}

void Denoiser::merge_adapters() {
  for (auto& a : adapters_) {
    if (!a) continue;
    auto w = block_map(params_.data(), block(projection_block(a->target)));
    Matrix merged = merge_lora(Matrix(w), *a);
    w = merged;
    a.reset();
  }
}

Gradients Denoiser::make_gradients() const {
  Gradients g;
  g.base.assign(params_.size(), 0.0);
  g.adapters.assign(adapter_parameter_count(), 0.0);
  return g;
}

void Denoiser::check_inputs(const ImageGrid& xt, std::span<const double> cond) const {
  if (xt.channels() != shape_.channels || xt.height() != shape_.height || xt.width() != shape_.width) {
    throw Error(Errc::dimension_mismatch,
                fmt::format("input ({}, {}, {}) vs model ({}, {}, {})", xt.channels(), xt.height(), xt.width(),
                            shape_.channels, shape_.height, shape_.width));
  }
  if (cond.size() != static_cast<std::size_t>(shape_.cond_dim)) {
    throw Error(Errc::dimension_mismatch,
                fmt::format("conditioning length {} vs cond_dim {}", cond.size(), shape_.cond_dim));
  }
  xt.check_finite();
}

namespace {

struct Forward {
  const Denoiser& model;

  Pass run(const ImageGrid& xt, int t, std::span<const double> cond) const {
    const auto& s = model.shape();
    const double* p = model.parameters().data();
    const int h = s.height;
    const int w = s.width;
    const int hw = h * w;
    const int ph = h / 2;
    const int pw = w / 2;
    const int tokens = ph * pw;

    Pass pass;
    pass.temb = timestep_embedding(t, s.time_dim);

    const ConstMatrixMap x(xt.values().data(), s.channels, hw);
    pass.cols_in = im2col(x, h, w);

    Eigen::Map<const RowVector> temb(pass.temb.data(), s.time_dim);
    Eigen::Map<const RowVector> cvec(cond.data(), s.cond_dim);
    RowVector bias = block_map(p, model.block("conv_in.bias")).transpose();
    bias.noalias() += temb * block_map(p, model.block("time_proj.weight"));
    bias.noalias() += cvec * block_map(p, model.block("cond_proj.weight"));

    pass.h0 = block_map(p, model.block("conv_in.weight")) * pass.cols_in;
    pass.h0.colwise() += bias.transpose();
    pass.a0 = pass.h0.unaryExpr(&silu);

    pass.tokens.resize(tokens, s.hidden);
    for (int c = 0; c < s.hidden; ++c) {
      for (int py = 0; py < ph; ++py) {
        for (int px = 0; px < pw; ++px) {
          const int y = 2 * py;
          const int x0 = 2 * px;
          pass.tokens(py * pw + px, c) = 0.25 * (pass.a0(c, y * w + x0) + pass.a0(c, y * w + x0 + 1) +
                                                 pass.a0(c, (y + 1) * w + x0) + pass.a0(c, (y + 1) * w + x0 + 1));
        }
      }
    }

    for (Projection proj : {Projection::query, Projection::key, Projection::value}) {
      const Matrix weight = model.projection_weight(proj);
      const auto& adapter = model.adapter(proj);
      pass.proj[static_cast<std::size_t>(proj)] =
          adapter ? adapted_forward(weight, *adapter, pass.tokens) : Matrix(pass.tokens * weight);
    }
    const Matrix& q = pass.proj[0];
    const Matrix& k = pass.proj[1];
    const Matrix& v = pass.proj[2];

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.hidden));
    pass.attn = (q * k.transpose()) * inv_sqrt;
    for (Eigen::Index i = 0; i < pass.attn.rows(); ++i) {
      auto row = pass.attn.row(i);
      const double peak = row.maxCoeff();
      row = (row.array() - peak).unaryExpr(&softmax_term).matrix();
      row /= row.sum();
    }
    pass.mixed = pass.attn * v;
    pass.z = pass.mixed * block_map(p, model.block("attn.out"));

    Matrix h1 = pass.a0;
    for (int c = 0; c < s.hidden; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) h1(c, y * w + x) += pass.z((y / 2) * pw + x / 2, c);
      }
    }

    pass.cols_mid = im2col(h1, h, w);
    pass.m = block_map(p, model.block("conv_mid.weight")) * pass.cols_mid;
    pass.m.colwise() += Eigen::Map<const Eigen::VectorXd>(p + model.block("conv_mid.bias").offset, s.hidden);
    pass.h2 = pass.m.unaryExpr(&silu);

    pass.cols_out = im2col(pass.h2, h, w);
    pass.out = block_map(p, model.block("conv_out.weight")) * pass.cols_out;
    pass.out.colwise() += Eigen::Map<const Eigen::VectorXd>(p + model.block("conv_out.bias").offset, s.channels);
    return pass;
  }
};

}  // namespace

ImageGrid Denoiser::predict(const ImageGrid& xt, int t, std::span<const double> cond) const {
  check_inputs(xt, cond);
  Pass pass = Forward{*this}.run(xt, t, cond);
  std::vector<double> values(pass.out.data(), pass.out.data() + pass.out.size());
  return ImageGrid(shape_.channels, shape_.height, shape_.width, std::move(values));
}

double Denoiser::loss_and_gradient(const ImageGrid& xt, int t, std::span<const double> cond, const ImageGrid& eps,
                                   double weight, Gradients& grads) const {
  check_inputs(xt, cond);
  require_same_shape(xt, eps, "loss target");
  if (grads.base.size() != params_.size() || grads.adapters.size() != adapter_parameter_count()) {
    throw Error(Errc::shape_mismatch, "gradient buffer does not match model layout");
  }
  const auto& s = shape_;
  const int h = s.height;
  const int w = s.width;
  const int pw = w / 2;
  const double* p = params_.data();
  double* g = grads.base.data();

  Pass pass = Forward{*this}.run(xt, t, cond);

  const ConstMatrixMap target(eps.values().data(), s.channels, static_cast<Eigen::Index>(h) * w);
  const Matrix diff = pass.out - target;
  const auto numel = static_cast<double>(diff.size());
  const double loss = weight * diff.squaredNorm() / numel;
  const Matrix d_out = diff * (2.0 * weight / numel);

  // conv_out
  block_map(g, block("conv_out.weight")).noalias() += d_out * pass.cols_out.transpose();
  Eigen::Map<Eigen::VectorXd>(g + block("conv_out.bias").offset, s.channels) += d_out.rowwise().sum();
  const Matrix d_h2 = col2im(block_map(p, block("conv_out.weight")).transpose() * d_out, s.hidden, h, w);

  // conv_mid + SiLU
  const Matrix d_m = d_h2.cwiseProduct(pass.m.unaryExpr(&silu_grad));
  block_map(g, block("conv_mid.weight")).noalias() += d_m * pass.cols_mid.transpose();
  Eigen::Map<Eigen::VectorXd>(g + block("conv_mid.bias").offset, s.hidden) += d_m.rowwise().sum();
  const Matrix d_h1 = col2im(block_map(p, block("conv_mid.weight")).transpose() * d_m, s.hidden, h, w);

  // Residual: h1 = a0 + upsample(z)
  Matrix d_a0 = d_h1;
  Matrix d_z = Matrix::Zero(pass.z.rows(), pass.z.cols());
  for (int c = 0; c < s.hidden; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) d_z((y / 2) * pw + x / 2, c) += d_h1(c, y * w + x);
    }
  }

  // Attention
  block_map(g, block("attn.out")).noalias() += pass.mixed.transpose() * d_z;
  const Matrix d_mixed = d_z * block_map(p, block("attn.out")).transpose();
  const Matrix& q = pass.proj[0];
  const Matrix& k = pass.proj[1];
  const Matrix& v = pass.proj[2];
  const Matrix d_attn = d_mixed * v.transpose();
  std::array<Matrix, 3> d_proj;
  d_proj[2] = pass.attn.transpose() * d_mixed;
  Matrix d_scores = pass.attn.cwiseProduct(d_attn);
  const Eigen::VectorXd row_dot = d_scores.rowwise().sum();
  d_scores = pass.attn.cwiseProduct(d_attn.colwise() - row_dot);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.hidden));
  d_proj[0] = (d_scores * k) * inv_sqrt;
  d_proj[1] = (d_scores.transpose() * q) * inv_sqrt;

  Matrix d_tokens = Matrix::Zero(pass.tokens.rows(), pass.tokens.cols());
  std::size_t adapter_at = 0;
  for (Projection proj : {Projection::query, Projection::key, Projection::value}) {
    const auto idx = static_cast<std::size_t>(proj);
    const ParameterBlock& wb = block(projection_block(proj));
    block_map(g, wb).noalias() += pass.tokens.transpose() * d_proj[idx];
    d_tokens.noalias() += d_proj[idx] * block_map(p, wb).transpose();
    const auto& adapter = adapters_[idx];
    if (!adapter) continue;
    const Matrix low = pass.tokens * adapter->a;
    const Matrix d_low = adapter->scale * (d_proj[idx] * adapter->b.transpose());
    MatrixMap d_a(grads.adapters.data() + adapter_at, adapter->a.rows(), adapter->a.cols());
    adapter_at += static_cast<std::size_t>(adapter->a.size());
    MatrixMap d_b(grads.adapters.data() + adapter_at, adapter->b.rows(), adapter->b.cols());
    adapter_at += static_cast<std::size_t>(adapter->b.size());
    d_b.noalias() += adapter->scale * (low.transpose() * d_proj[idx]);
    d_a.noalias() += pass.tokens.transpose() * d_low;
    d_tokens.noalias() += d_low * adapter->a.transpose();
  }

  // Average pool
  for (int c = 0; c < s.hidden; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) d_a0(c, y * w + x) += 0.25 * d_tokens((y / 2) * pw + x / 2, c);
    }
  }

  // conv_in + conditioning biases
  const Matrix d_h0 = d_a0.cwiseProduct(pass.h0.unaryExpr(&silu_grad));
  block_map(g, block("conv_in.weight")).noalias() += d_h0 * pass.cols_in.transpose();
  const Eigen::VectorXd d_bias = d_h0.rowwise().sum();
  Eigen::Map<Eigen::VectorXd>(g + block("conv_in.bias").offset, s.hidden) += d_bias;
  Eigen::Map<const Eigen::VectorXd> temb(pass.temb.data(), s.time_dim);
  Eigen::Map<const Eigen::VectorXd> cvec(cond.data(), s.cond_dim);
  block_map(g, block("time_proj.weight")).noalias() += temb * d_bias.transpose();
  block_map(g, block("cond_proj.weight")).noalias() += cvec * d_bias.transpose();

  return loss;
}

}  // namespace leafbench
