// SPDX-License-Identifier: Apache-2.0
#include <Eigen/SVD>
#include <gtest/gtest.h>

#include "leafbench/denoiser.hpp"
#include "leafbench/error.hpp"
#include "leafbench/lora.hpp"
#include "leafbench/train.hpp"
#include "support.hpp"

namespace lb = leafbench;
using lb::Matrix;
using lb::RowVector;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  const auto v = lb::testing::random_vector(static_cast<std::size_t>(rows) * cols, seed);
  return lb::ConstMatrixMap(v.data(), rows, cols);
}

}  // namespace

TEST(Lora, FreshAdapterIsExactIdentity) {
  const Matrix w = random_matrix(8, 8, 1);
  const auto adapter = lb::init_lora(8, 8, 2, 5);
  EXPECT_TRUE(adapter.b.isZero(0.0));
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const RowVector x = random_matrix(1, 8, seed);
    const RowVector base = x * w;
    const RowVector out = lb::adapted_forward(w, adapter, x);
    for (int i = 0; i < 8; ++i) EXPECT_EQ(out(i), base(i));
  }
  const Matrix xs = random_matrix(5, 8, 3);
  EXPECT_TRUE((lb::adapted_forward(w, adapter, xs).array() == (xs * w).array()).all());
}

TEST(Lora, InitStatistics) {
  // A ~ N(0, 1/rank): sample variance over a large block
  const auto adapter = lb::init_lora(5000, 5000, 4, 9);
  const double mean = adapter.a.mean();
  const double var = (adapter.a.array() - mean).square().sum() / (adapter.a.size() - 1);
  EXPECT_NEAR(var, 0.25, 0.25 * 0.05);
}

TEST(Lora, ParameterCount) {
  EXPECT_EQ(lb::init_lora(8, 8, 2, 1).trainable_parameters(), 32);
}

TEST(Lora, RankMustBeBelowBothDimensions) {
  try {
    lb::init_lora(8, 8, 8, 1);
    FAIL();
  } catch (const lb::Error& e) {
    EXPECT_EQ(e.code(), lb::Errc::rank_too_large);
  }
  EXPECT_THROW(lb::init_lora(16, 4, 4, 1), lb::Error);
  EXPECT_THROW(lb::init_lora(8, 8, 0, 1), lb::Error);
}

TEST(Lora, HandExampleUnderRowConvention) {
  // y = x (W + A B); x = [1, 0] picks the first row of [[1, 1], [0, 1]]
  const Matrix w = Matrix::Identity(2, 2);
  lb::LoraAdapter adapter;
  adapter.a = Matrix{{1.0}, {0.0}};
  adapter.b = Matrix{{0.0, 1.0}};
  const RowVector x{{1.0, 0.0}};
  const RowVector y = lb::adapted_forward(w, adapter, x);
  EXPECT_EQ(y(0), 1.0);
  EXPECT_EQ(y(1), 1.0);
  const Matrix merged = lb::merge_lora(w, adapter);
  EXPECT_EQ(merged, (Matrix{{1.0, 1.0}, {0.0, 1.0}}));
}

TEST(Lora, ZeroScaleIsBase) {
  const Matrix w = random_matrix(8, 8, 1);
  auto adapter = lb::init_lora(8, 8, 2, 5, lb::Projection::key, 0.0);
  adapter.b = random_matrix(2, 8, 6);
  const RowVector x = random_matrix(1, 8, 7);
  const RowVector base = x * w;
  EXPECT_TRUE((lb::adapted_forward(w, adapter, x).array() == base.array()).all());
}

TEST(Lora, LowRankPathMatchesMergedDense) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Matrix w = random_matrix(8, 8, seed);
    auto adapter = lb::init_lora(8, 8, 3, seed + 100, lb::Projection::value, 0.5 + 0.1 * seed);
    adapter.b = random_matrix(3, 8, seed + 200);
    const RowVector x = random_matrix(1, 8, seed + 300);
    const RowVector low = lb::adapted_forward(w, adapter, x);
    const RowVector dense = x * lb::merge_lora(w, adapter);
    for (int i = 0; i < 8; ++i) EXPECT_LT(std::abs(low(i) - dense(i)), 1e-6 * (1.0 + std::abs(dense(i))));
  }
}

TEST(Lora, MergeWithZeroBIsBitwiseBase) {
  const Matrix w = random_matrix(6, 6, 1);
  EXPECT_EQ(lb::merge_lora(w, lb::init_lora(6, 6, 2, 3)), w);
}

TEST(Lora, RankOneUpdateHasRankOne) {
  const Matrix w = random_matrix(8, 8, 1);
  auto adapter = lb::init_lora(8, 8, 1, 2);
  adapter.b = random_matrix(1, 8, 3);
  const Matrix delta = lb::merge_lora(w, adapter) - w;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta);
  const auto sv = svd.singularValues();
  EXPECT_GT(sv(0), 0.0);
  EXPECT_LT(sv(1), 1e-8 * sv(0));
}

TEST(Lora, MergeThenZeroAdapterAgrees) {
  const Matrix w = random_matrix(8, 8, 4);
  auto adapter = lb::init_lora(8, 8, 2, 5);
  adapter.b = random_matrix(2, 8, 6);
  const Matrix merged = lb::merge_lora(w, adapter);
  const auto zeroed = lb::init_lora(8, 8, 2, 7);
  const RowVector x = random_matrix(1, 8, 8);
  const RowVector before = lb::adapted_forward(w, adapter, x);
  const RowVector after = lb::adapted_forward(merged, zeroed, x);
  EXPECT_LT((before - after).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Lora, DimensionMismatch) {
  const Matrix w = random_matrix(8, 6, 1);
  const auto adapter = lb::init_lora(8, 8, 2, 5);
  EXPECT_THROW(lb::merge_lora(w, adapter), lb::Error);
  EXPECT_THROW(lb::adapted_forward(random_matrix(8, 8, 2), adapter, RowVector(RowVector::Zero(5))), lb::Error);
}

TEST(Lora, TrainableRatioIsOneEighth) {
  lb::Denoiser model(lb::DenoiserShape{3, 8, 8, 64, 8, 4}, 1);
  model.attach_lora(4, 2);
  std::size_t projection_params = 0;
  for (const char* name : {"attn.q", "attn.k", "attn.v"}) projection_params += model.block(name).count;
  EXPECT_EQ(model.adapter_parameter_count(), 3u * 2u * 64u * 4u);
  EXPECT_EQ(projection_params, 3u * 64u * 64u);
  EXPECT_EQ(model.adapter_parameter_count() * 8, projection_params);
}

TEST(Lora, AttachedFreshAdaptersLeaveDenoiserUnchanged) {
  lb::Denoiser model(lb::testing::tiny_shape(), 3);
  const auto xt = lb::testing::random_grid(3, 8, 8, 1);
  const auto cond = lb::testing::random_vector(8, 2);
  const auto before = model.predict(xt, 10, cond);
  model.attach_lora(2, 4);
  EXPECT_EQ(model.predict(xt, 10, cond), before);
}

TEST(Lora, MergedDenoiserMatchesAdapted) {
  auto model = lb::testing::tiny_model_with_lora(5);
  const auto xt = lb::testing::random_grid(3, 8, 8, 1);
  const auto cond = lb::testing::random_vector(8, 2);
  const auto adapted = model.predict(xt, 10, cond);
  model.merge_adapters();
  EXPECT_FALSE(model.has_adapters());
  const auto merged = model.predict(xt, 10, cond);
  for (std::size_t i = 0; i < merged.size(); ++i) EXPECT_NEAR(merged.values()[i], adapted.values()[i], 1e-9);
}

TEST(Lora, LoraTrainingLeavesBaseBitwiseUnchanged) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 3);
  std::vector<lb::TrainExample> data;
  for (std::uint64_t i = 0; i < 3; ++i) {
    data.push_back({lb::testing::random_grid(3, 8, 8, i), lb::testing::random_vector(8, i + 10)});
  }
  lb::TrainConfig cfg;
  cfg.mode = lb::FineTuneMode::lora;
  cfg.lora_rank = 2;
  cfg.training_steps = 20;
  cfg.gradient_accumulation_steps = 2;
  cfg.learning_rate = 1e-2;
  const auto result = lb::train(model, data, lb::make_schedule(), cfg);
  const auto before = model.parameters();
  const auto after = result.model.parameters();
  ASSERT_EQ(before.size(), after.size());
  EXPECT_TRUE(std::equal(before.begin(), before.end(), after.begin()));
  ASSERT_TRUE(result.model.has_adapters());
  EXPECT_FALSE(result.model.adapter(lb::Projection::query)->b.isZero(0.0));
}
