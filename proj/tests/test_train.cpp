// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "leafbench/checkpoint.hpp"
#include "leafbench/error.hpp"
#include "leafbench/train.hpp"
#include "support.hpp"

namespace lb = leafbench;

namespace {

std::vector<lb::TrainExample> toy_dataset(int n) {
  std::vector<lb::TrainExample> data;
  for (int i = 0; i < n; ++i) {
    auto img = lb::testing::random_grid(3, 8, 8, static_cast<std::uint64_t>(i));
    for (double& v : img.values()) v = std::tanh(v);
    data.push_back({img, lb::testing::random_vector(8, 100 + static_cast<std::uint64_t>(i))});
  }
  return data;
}

lb::TrainConfig small_config() {
  lb::TrainConfig cfg;
  cfg.training_steps = 12;
  cfg.learning_rate = 1e-3;
  cfg.rng_seed = 42;
  return cfg;
}

bool same_parameters(const lb::Denoiser& a, const lb::Denoiser& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  return pa.size() == pb.size() && std::equal(pa.begin(), pa.end(), pb.begin());
}

}  // namespace

TEST(Train, ZeroStepsIsNoOp) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  auto cfg = small_config();
  cfg.training_steps = 0;
  const auto result = lb::train(model, toy_dataset(2), lb::make_schedule(), cfg);
  EXPECT_TRUE(same_parameters(model, result.model));
  EXPECT_TRUE(result.loss_history.empty());
}

TEST(Train, OneLossPerUpdate) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  int calls = 0;
  const auto result = lb::train(model, toy_dataset(3), lb::make_schedule(), small_config(),
                                [&](int update, double) { EXPECT_EQ(update, ++calls); });
  EXPECT_EQ(result.loss_history.size(), 12u);
  EXPECT_EQ(calls, 12);
  for (double l : result.loss_history) EXPECT_TRUE(std::isfinite(l) && l >= 0.0);
}

TEST(Train, AccumulationMatchesFullBatch) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  const auto data = toy_dataset(1);
  auto accum = small_config();
  accum.gradient_accumulation_steps = 4;
  accum.batch_size = 1;
  auto full = accum;
  full.gradient_accumulation_steps = 1;
  full.batch_size = 4;
  const auto a = lb::train(model, data, lb::make_schedule(), accum);
  const auto b = lb::train(model, data, lb::make_schedule(), full);
  EXPECT_TRUE(same_parameters(a.model, b.model));
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Train, FirstUpdateIsWarmupScaledAdamStep) {
  // With one update, Adam moves each weight by lr_1 * g / (|g| + eps) after bias correction.
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  const auto data = toy_dataset(1);
  auto cfg = small_config();
  cfg.training_steps = 1;
  cfg.gradient_accumulation_steps = 1;
  cfg.uncond_probability = 0.0;
  const auto result = lb::train(model, data, lb::make_schedule(), cfg);
  const double lr1 = cfg.learning_rate / cfg.lr_warmup_steps;
  const auto before = model.parameters();
  const auto after = result.model.parameters();
  std::size_t moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double step = std::abs(after[i] - before[i]);
    EXPECT_LE(step, lr1 * (1.0 + 1e-9));
    if (step > 0.5 * lr1) ++moved;
  }
  EXPECT_GT(moved, before.size() / 2);
}

TEST(Train, SeedDeterminism) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  const auto data = toy_dataset(3);
  const auto a = lb::train(model, data, lb::make_schedule(), small_config());
  const auto b = lb::train(model, data, lb::make_schedule(), small_config());
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_TRUE(same_parameters(a.model, b.model));
  auto other = small_config();
  other.rng_seed = 43;
  EXPECT_NE(lb::train(model, data, lb::make_schedule(), other).loss_history, a.loss_history);
}

TEST(Train, WarmupSchedule) {
  lb::TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.lr_warmup_steps = 10;
  EXPECT_DOUBLE_EQ(lb::learning_rate_at(cfg, 1), 1e-5);
  EXPECT_DOUBLE_EQ(lb::learning_rate_at(cfg, 5), 5e-5);
  EXPECT_DOUBLE_EQ(lb::learning_rate_at(cfg, 10), 1e-4);
  EXPECT_DOUBLE_EQ(lb::learning_rate_at(cfg, 2000), 1e-4);
  cfg.lr_warmup_steps = 0;
  EXPECT_DOUBLE_EQ(lb::learning_rate_at(cfg, 1), 1e-4);
}

TEST(Train, Errors) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  try {
    lb::train(model, {}, lb::make_schedule(), small_config());
    FAIL();
  } catch (const lb::Error& e) {
    EXPECT_EQ(e.code(), lb::Errc::empty_dataset);
  }
  auto bad = small_config();
  bad.learning_rate = -1.0;
  EXPECT_THROW(bad.validate(), lb::Error);
  bad = small_config();
  bad.gradient_accumulation_steps = 0;
  EXPECT_THROW(bad.validate(), lb::Error);
  bad = small_config();
  bad.lr_schedule = "cosine";
  EXPECT_THROW(bad.validate(), lb::Error);
}

TEST(Train, DivergenceAbortsWithDiagnostic) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  auto cfg = small_config();
  cfg.learning_rate = 1e200;
  cfg.lr_warmup_steps = 0;
  cfg.training_steps = 50;
  try {
    lb::train(model, toy_dataset(2), lb::make_schedule(), cfg);
    FAIL() << "expected divergence";
  } catch (const lb::Error& e) {
    EXPECT_EQ(e.code(), lb::Errc::non_finite);
    EXPECT_NE(std::string(e.what()).find("update"), std::string::npos) << e.what();
  }
}

TEST(Train, LossDecreasesOnToyData) {
  const lb::Denoiser model(lb::testing::tiny_shape(), 1);
  auto cfg = small_config();
  cfg.training_steps = 300;
  cfg.learning_rate = 3e-3;
  const auto result = lb::train(model, toy_dataset(2), lb::make_schedule(), cfg);
  double head = 0.0;
  double tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += result.loss_history[static_cast<std::size_t>(i)];
    tail += result.loss_history[result.loss_history.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, head);
}

TEST(Checkpoint, RoundTripIsLossless) {
  auto model = lb::testing::tiny_model_with_lora(3);
  lb::TrainConfig cfg = small_config();
  cfg.snr_gamma.reset();
  cfg.mode = lb::FineTuneMode::lora;
  cfg.learning_rate = 0.1 + 1e-17;
  const lb::Checkpoint ckpt{model, lb::make_schedule(20, 1e-3, 0.2), cfg};
  std::stringstream buf;
  lb::write_checkpoint(buf, ckpt);
  const auto back = lb::read_checkpoint(buf);
  EXPECT_EQ(back.model.shape(), model.shape());
  EXPECT_TRUE(same_parameters(back.model, model));
  EXPECT_EQ(back.model.adapter_parameters(), model.adapter_parameters());
  EXPECT_EQ(back.schedule, ckpt.schedule);
  EXPECT_EQ(back.config, cfg);

  lb::testing::TempDir dir("ckpt");
  lb::save_checkpoint(dir / "model.ckpt", ckpt);
  const auto loaded = lb::load_checkpoint(dir / "model.ckpt");
  const auto xt = lb::testing::random_grid(3, 8, 8, 1);
  const auto cond = lb::testing::random_vector(8, 2);
  EXPECT_EQ(loaded.model.predict(xt, 5, cond), model.predict(xt, 5, cond));
}

TEST(Checkpoint, RejectsForeignOrTruncatedInput) {
  std::stringstream junk("not a checkpoint\n");
  EXPECT_THROW(lb::read_checkpoint(junk), lb::Error);
  const lb::Checkpoint ckpt{lb::Denoiser(lb::testing::tiny_shape(), 1), lb::make_schedule(5, 0.1, 0.2), {}};
  std::stringstream buf;
  lb::write_checkpoint(buf, ckpt);
  std::string text = buf.str();
  std::stringstream cut(text.substr(0, text.size() / 2));
  EXPECT_THROW(lb::read_checkpoint(cut), lb::Error);
  EXPECT_THROW(lb::load_checkpoint("/nonexistent/model.ckpt"), lb::Error);
}
