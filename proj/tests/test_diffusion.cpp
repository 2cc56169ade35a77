// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "leafbench/diffusion.hpp"
#include "leafbench/error.hpp"
#include "leafbench/schedule.hpp"
#include "support.hpp"

namespace lb = leafbench;
using lb::Errc;
using lb::ImageGrid;

namespace {

template <typename F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const lb::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no leafbench::Error thrown";
  return Errc::precondition;
}

}  // namespace

TEST(Schedule, SingleStep) {
  const auto s = lb::make_schedule(1, 0.5, 0.5);
  ASSERT_EQ(s.num_steps(), 1);
  EXPECT_EQ(s.alpha_bar(1), 0.5);
}

TEST(Schedule, TwoStepsMatchHandProduct) {
  const auto s = lb::make_schedule(2, 0.1, 0.3);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.63, 1e-15);
}

TEST(Schedule, DefaultIsStrictlyDecreasingAndEndsNoisy) {
  const auto s = lb::make_schedule();
  ASSERT_EQ(s.num_steps(), 1000);
  // independent product with the betas spelled out
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0;
    prod *= 1.0 - beta;
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-12 * prod) << t;
    if (t > 1) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_GE(s.alpha_bar(1), 0.99);
  EXPECT_LT(s.alpha_bar(1000), 0.05);
}

TEST(Schedule, RebuildIsIdentical) {
  EXPECT_EQ(lb::make_schedule(), lb::make_schedule());
  const auto a = lb::make_schedule(50, 1e-3, 0.05);
  const auto b = lb::make_schedule(50, 1e-3, 0.05);
  EXPECT_EQ(a.alpha_bars(), b.alpha_bars());
}

TEST(Schedule, RejectsBadRanges) {
  EXPECT_EQ(error_code_of([] { lb::make_schedule(0, 0.1, 0.2); }), Errc::invalid_range);
  EXPECT_EQ(error_code_of([] { lb::make_schedule(10, 0.0, 0.2); }), Errc::invalid_range);
  EXPECT_EQ(error_code_of([] { lb::make_schedule(10, 0.3, 0.2); }), Errc::invalid_range);
  EXPECT_EQ(error_code_of([] { lb::make_schedule(10, 0.1, 1.0); }), Errc::invalid_range);
  const auto s = lb::make_schedule(10, 0.1, 0.2);
  EXPECT_EQ(error_code_of([&] { (void)s.alpha_bar(0); }), Errc::step_out_of_range);
  EXPECT_EQ(error_code_of([&] { (void)s.alpha_bar(11); }), Errc::step_out_of_range);
}

TEST(Schedule, MinSnrWeight) {
  // SNR = ab / (1 - ab); ab = 0.5 gives SNR 1, ab = 20/21 gives SNR 20
  EXPECT_DOUBLE_EQ(lb::min_snr_weight(0.5, 5.0), 1.0);
  EXPECT_NEAR(lb::min_snr_weight(20.0 / 21.0, 5.0), 0.25, 1e-12);
  EXPECT_EQ(lb::min_snr_weight(1.0, 5.0), 0.0);
}

TEST(ForwardNoise, Endpoints) {
  const ImageGrid x0 = lb::testing::random_grid(3, 4, 4, 1);
  const ImageGrid eps = lb::testing::random_grid(3, 4, 4, 2);
  EXPECT_EQ(lb::forward_noise(x0, eps, 1.0), x0);
  EXPECT_EQ(lb::forward_noise(x0, eps, 0.0), eps);
}

TEST(ForwardNoise, HandValue) {
  const ImageGrid x0(1, 1, 2, {1.0, 0.0});
  const ImageGrid eps(1, 1, 2, {2.0, -2.0});
  const auto xt = lb::forward_noise(x0, eps, 0.25);
  EXPECT_NEAR(xt.at(0, 0, 0), 2.23205, 1e-5);
  EXPECT_NEAR(xt.at(0, 0, 1), -1.73205, 1e-5);
}

TEST(ForwardNoise, Errors) {
  const auto s = lb::make_schedule(10, 0.1, 0.2);
  const ImageGrid a(1, 2, 2);
  const ImageGrid b(1, 2, 3);
  EXPECT_EQ(error_code_of([&] { lb::forward_noise(a, 1, b, s); }), Errc::shape_mismatch);
  EXPECT_EQ(error_code_of([&] { lb::forward_noise(a, 0, a, s); }), Errc::step_out_of_range);
  EXPECT_EQ(error_code_of([&] { lb::forward_noise(a, 11, a, s); }), Errc::step_out_of_range);
}

TEST(ForwardNoise, EmpiricalVarianceMatchesSchedule) {
  const auto s = lb::make_schedule();
  const int n = 100000;
  const ImageGrid x0(1, 1, n);
  for (int t : {1, 10, 250, 600, 1000}) {
    const ImageGrid eps = lb::testing::random_grid(1, 1, n, 1000 + t);
    const auto xt = lb::forward_noise(x0, t, eps, s);
    double mean = 0.0;
    for (double v : xt.values()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : xt.values()) var += (v - mean) * (v - mean);
    var /= n - 1;
    const double expected = 1.0 - s.alpha_bar(t);
    EXPECT_LT(std::abs(var - expected) / expected, 0.02) << "t=" << t;
  }
}

TEST(Denoiser, ParameterCountMatchesManifest) {
  const lb::Denoiser model(lb::DenoiserShape{}, 3);
  std::size_t sum = 0;
  for (const auto& b : model.manifest()) {
    std::size_t prod = 1;
    for (int d : b.shape) prod *= static_cast<std::size_t>(d);
    EXPECT_EQ(prod, b.count) << b.name;
    sum += b.count;
  }
  EXPECT_EQ(sum, model.parameter_count());
  EXPECT_LE(model.parameter_count(), 200000u);
}

TEST(Denoiser, DeterministicAndShapePreserving) {
  const lb::Denoiser model(lb::DenoiserShape{}, 3);
  const auto xt = lb::testing::random_grid(3, 32, 32, 5);
  const auto cond = lb::testing::random_vector(64, 6);
  const auto a = lb::predict_noise(model, xt, 17, cond);
  const auto b = lb::predict_noise(model, xt, 17, cond);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.same_shape(xt));
  const lb::Denoiser again(lb::DenoiserShape{}, 3);
  EXPECT_EQ(lb::predict_noise(again, xt, 17, cond), a);
}

TEST(Denoiser, ZeroOutputLayerGivesZeros) {
  const lb::Denoiser model(lb::DenoiserShape{}, 11, /*zero_init_output=*/true);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto out = lb::predict_noise(model, lb::testing::random_grid(3, 32, 32, seed), 500,
                                       lb::testing::random_vector(64, seed + 50));
    for (double v : out.values()) ASSERT_EQ(v, 0.0);
  }
}

TEST(Denoiser, RejectsWrongConditioningLength) {
  const lb::Denoiser model(lb::DenoiserShape{}, 3);
  const auto xt = lb::testing::random_grid(3, 32, 32, 5);
  const std::vector<double> cond(63, 0.0);
  EXPECT_EQ(error_code_of([&] { lb::predict_noise(model, xt, 1, cond); }), Errc::dimension_mismatch);
}

TEST(Loss, HandValues) {
  const ImageGrid ones(1, 1, 2, {1.0, 1.0});
  const ImageGrid zeros(1, 1, 2);
  EXPECT_EQ(lb::mse_loss(ones, zeros), 1.0);
  EXPECT_EQ(lb::mse_loss(ones, ones), 0.0);
  const auto s = lb::make_schedule();
  EXPECT_EQ(lb::loss_weight(s, 300, std::nullopt), 1.0);
}

TEST(Loss, PerfectPredictionIsZero) {
  const lb::Denoiser model(lb::DenoiserShape{}, 11, true);
  const auto s = lb::make_schedule();
  const ImageGrid eps(3, 32, 32);
  const auto x0 = lb::testing::random_grid(3, 32, 32, 1);
  EXPECT_EQ(lb::training_loss(model, x0, 40, eps, lb::testing::random_vector(64, 2), s, 5.0), 0.0);
}

TEST(Loss, AnalyticGradientMatchesFiniteDifferences) {
  const auto s = lb::make_schedule();
  const lb::Denoiser model(lb::testing::tiny_shape(), 21);
  ASSERT_LE(model.parameter_count(), 5000u);
  const auto plain = lb::testing::check_gradients(model, s, 404, std::nullopt);
  EXPECT_LT(plain.max_relative_error, 1e-4) << plain.worst;
  const auto weighted = lb::testing::check_gradients(model, s, 77, 5.0);
  EXPECT_LT(weighted.max_relative_error, 1e-4) << weighted.worst;
}

TEST(Loss, AdapterGradientsMatchFiniteDifferences) {
  const auto s = lb::make_schedule();
  const auto model = lb::testing::tiny_model_with_lora(31);
  const auto check = lb::testing::check_gradients(model, s, 123, 5.0);
  EXPECT_GT(check.checked, model.parameter_count());
  EXPECT_LT(check.max_relative_error, 1e-4) << check.worst;
}

TEST(Guidance, Identities) {
  const auto u = lb::testing::random_grid(3, 4, 4, 1);
  const auto c = lb::testing::random_grid(3, 4, 4, 2);
  EXPECT_EQ(lb::guide(u, c, 1.0), c);
  EXPECT_EQ(lb::guide(u, c, 0.0), u);
  const auto g = lb::guide(u, c, 2.5);
  EXPECT_DOUBLE_EQ(g.at(1, 2, 3), u.at(1, 2, 3) + 2.5 * (c.at(1, 2, 3) - u.at(1, 2, 3)));
}

TEST(Sampler, GuidanceEndpointsSelectOneBranch) {
  const lb::Denoiser model(lb::DenoiserShape{}, 8);
  const auto s = lb::make_schedule();
  const auto cond = lb::testing::random_vector(64, 1);
  const std::vector<double> uncond(64, 0.0);
  lb::SampleOptions opts{10, 1.0, 99};
  const auto at_one = lb::sample(model, s, cond, uncond, opts);
  // with both branches fed the prompt, any scale reduces to the conditional prediction
  opts.guidance_scale = 2.5;
  EXPECT_EQ(at_one, lb::sample(model, s, cond, cond, opts));
  opts.guidance_scale = 0.0;
  const auto at_zero = lb::sample(model, s, cond, uncond, opts);
  opts.guidance_scale = 2.5;
  EXPECT_EQ(at_zero, lb::sample(model, s, uncond, uncond, opts));
  EXPECT_NE(at_one, at_zero);
}

TEST(Sampler, OneStepOracleReconstructs) {
  const auto x0 = lb::testing::random_grid(3, 8, 8, 4);
  ImageGrid target = x0;
  for (double& v : target.values()) v = std::tanh(v);  // keep inside [-1, 1]
  for (const auto& s : {lb::make_schedule(1, 0.5, 0.5), lb::make_schedule()}) {
    const lb::NoiseFn oracle = [&](const ImageGrid& xt, int t, std::span<const double>) {
      const double ab = s.alpha_bar(t);
      ImageGrid eps(xt.channels(), xt.height(), xt.width());
      for (std::size_t i = 0; i < eps.size(); ++i) {
        eps.values()[i] = (xt.values()[i] - std::sqrt(ab) * target.values()[i]) / std::sqrt(1.0 - ab);
      }
      return eps;
    };
    const std::vector<double> cond(4, 0.0);
    const auto out = lb::sample(oracle, 3, 8, 8, s, cond, cond, {1, 2.5, 5});
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out.values()[i], target.values()[i], 1e-5);
  }
}

TEST(Sampler, DeterministicAndClamped) {
  const lb::Denoiser model(lb::DenoiserShape{}, 8);
  const auto s = lb::make_schedule();
  const auto cond = lb::testing::random_vector(64, 1);
  const std::vector<double> uncond(64, 0.0);
  const auto a = lb::sample(model, s, cond, uncond, {20, 2.5, 3});
  EXPECT_EQ(a, lb::sample(model, s, cond, uncond, {20, 2.5, 3}));
  EXPECT_NE(a, lb::sample(model, s, cond, uncond, {20, 2.5, 4}));
  for (double v : a.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Sampler, Errors) {
  const lb::Denoiser model(lb::DenoiserShape{}, 8);
  const auto s = lb::make_schedule();
  const std::vector<double> cond(64, 0.0);
  EXPECT_EQ(error_code_of([&] { lb::sample(model, s, cond, cond, {0, 2.5, 1}); }), Errc::invalid_step_count);
  EXPECT_EQ(error_code_of([&] { lb::sample(model, s, cond, cond, {1001, 2.5, 1}); }), Errc::invalid_step_count);
  EXPECT_EQ(error_code_of([&] { lb::sample(model, s, cond, cond, {10, -0.5, 1}); }), Errc::invalid_range);
}

TEST(Sampler, TimestepsSpanTheSchedule) {
  const auto ts = lb::inference_timesteps(1000, 50);
  ASSERT_EQ(ts.size(), 50u);
  EXPECT_EQ(ts.front(), 1000);
  EXPECT_EQ(ts.back(), 20);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
  EXPECT_EQ(lb::inference_timesteps(1, 1), std::vector<int>{1});
}
