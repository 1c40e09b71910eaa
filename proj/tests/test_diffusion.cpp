#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lft/diffusion.hpp"
#include "oracles.hpp"

using namespace lft;
using lft::testing::random_tensor;

namespace {

// Posterior mean of x* ~ N(mu, s^2) observed as x* + sigma * noise.
Denoiser gaussian_denoiser(double mu, double s) {
  return [mu, s](const Tensor& x, double sigma) {
    Tensor out = x;
    const double s2 = s * s, v = sigma * sigma;
    for (double& e : out.values()) e = (s2 * e + v * mu) / (s2 + v);
    return out;
  };
}

ModelConfig small_config() {
  ModelConfig c;
  c.channels = 4;
  c.latent_channels = 4;
  c.frames = 32;
  c.frame_rate_hz = 16.0;
  c.encoder_hidden = 16;
  c.encoder_layers = 2;
  c.decoder_hidden = 16;
  c.decoder_blocks = 3;
  c.embedding_dim = 8;
  return c;
}

}  // namespace

TEST(Schedule, EndpointsAndMonotone) {
  const auto s = karras_schedule(32);
  ASSERT_EQ(s.sigmas.size(), 33u);
  EXPECT_EQ(s.sigmas.front(), 80.0);
  EXPECT_EQ(s.sigmas[31], 0.002);
  EXPECT_EQ(s.sigmas.back(), 0.0);
  for (std::size_t i = 1; i < s.sigmas.size(); ++i) EXPECT_LT(s.sigmas[i], s.sigmas[i - 1]);
  EXPECT_NO_THROW(validate(s));
}

TEST(Schedule, RhoOneIsAffine) {
  const auto s = karras_schedule(5, 1.0, 9.0, 1.0);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(s.sigmas[i], 9.0 - 2.0 * double(i), 1e-12);
}

TEST(Schedule, ZeroStepsRejected) { EXPECT_THROW(karras_schedule(0), config_error); }

TEST(ForwardNoise, ZeroSigmaAndVariance) {
  Rng rng(1);
  const Tensor x0 = random_tensor({1, 10000}, rng);
  EXPECT_EQ(forward_noise(x0, 0.0, rng), x0);
  const Tensor x = forward_noise(x0, 0.7, rng);
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) var += (x[i] - x0[i]) * (x[i] - x0[i]);
  var /= double(x.size());
  EXPECT_NEAR(var, 0.49, 0.05 * 0.49);
  EXPECT_THROW(forward_noise(x0, -1.0, rng), lft::domain_error);
}

TEST(SampleSigma, MedianAndClip) {
  Rng rng(2);
  std::vector<double> draws(100000);
  for (double& d : draws) d = sample_sigma(rng);
  EXPECT_LE(*std::max_element(draws.begin(), draws.end()), 80.0);
  EXPECT_GT(*std::min_element(draws.begin(), draws.end()), 0.0);
  std::nth_element(draws.begin(), draws.begin() + 50000, draws.end());
  EXPECT_NEAR(draws[50000], std::exp(-1.2), 0.03 * std::exp(-1.2));
}

TEST(Sampler, SingleStepWithOracleLandsOnData) {
  const Tensor target(Shape{1, 5}, std::vector<double>{0.1, -2.0, 3.5, 0.0, 7.0});
  Denoiser oracle = [&](const Tensor&, double) { return target; };
  Rng rng(3);
  const auto s = karras_schedule(1);
  EXPECT_EQ(ode_sample(oracle, target.shape(), s, rng, true), target);
  Rng rng2(3);
  EXPECT_EQ(ode_sample(oracle, target.shape(), s, rng2, false), target);
}

TEST(Sampler, GaussianToyMatchesDataDistribution) {
  const double mu = 0.5, sd = 1.0;
  Rng rng(4);
  const Tensor x = ode_sample(gaussian_denoiser(mu, sd), Shape{1, 10000}, karras_schedule(32), rng, true);
  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= double(x.size());
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= double(x.size());
  EXPECT_LT(std::abs(mean - mu), 3.0 * sd / 100.0);
  EXPECT_LT(std::abs(var - sd * sd), 0.05 * sd * sd);
}

TEST(Sampler, EulerWithTwiceTheStepsApproachesHeun) {
  const auto d = gaussian_denoiser(0.5, 1.0);
  auto run = [&](std::size_t n, bool heun) {
    Rng rng(5);
    return ode_sample(d, Shape{1, 256}, karras_schedule(n), rng, heun);
  };
  const Tensor heun = run(8, true);
  const Tensor e1 = run(8, false), e2 = run(16, false);
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < heun.size(); ++i) {
    d1 += (e1[i] - heun[i]) * (e1[i] - heun[i]);
    d2 += (e2[i] - heun[i]) * (e2[i] - heun[i]);
  }
  EXPECT_LT(d2, d1);
}

TEST(Sampler, BlendDerivativeIsWeightedSum) {
  const Tensor c1(Shape{1, 3}, std::vector<double>{1.0, 2.0, 3.0});
  const Tensor c2(Shape{1, 3}, std::vector<double>{-1.0, 0.5, 4.0});
  const std::vector<Denoiser> ds{[&](const Tensor&, double) { return c1; }, [&](const Tensor&, double) { return c2; }};
  const double w[2] = {0.3, 0.9};
  const Tensor x(Shape{1, 3}, std::vector<double>{0.2, 0.4, -0.6});
  const Tensor d = detail::weighted_derivative(ds, w, x, 2.0);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(d[i], 0.3 * (x[i] - c1[i]) / 2.0 + 0.9 * (x[i] - c2[i]) / 2.0);
  }
}

TEST(Sampler, BlendDegeneraciesAreBitExact) {
  const auto d = gaussian_denoiser(0.5, 1.0);
  const auto other = gaussian_denoiser(-3.0, 0.2);
  const auto s = karras_schedule(10);
  Rng r1(6), r2(6), r3(6);
  const Tensor plain = ode_sample(d, Shape{2, 7}, s, r1);
  EXPECT_EQ(blend_sample(d, d, 0.5, 0.5, Shape{2, 7}, s, r2), plain);
  EXPECT_EQ(blend_sample(d, other, 1.0, 0.0, Shape{2, 7}, s, r3), plain);
}

TEST(Sampler, DivergenceReportsStep) {
  Denoiser bad = [](const Tensor& x, double sigma) {
    Tensor out = x;
    if (sigma < 1.0) out[0] = std::nan("");
    return out;
  };
  Rng rng(7);
  try {
    ode_sample(bad, Shape{1, 2}, karras_schedule(16), rng, false);
    FAIL() << "expected divergence";
  } catch (const sampler_divergence_error& e) {
    EXPECT_GT(e.step, 0u);
  }
}

TEST(Training, LearningRateSchedule) {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.warmup_steps = 10;
  c.total_steps = 100;
  c.decay_steps = 50;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 9), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 30), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 50), 1.0);
  EXPECT_NEAR(learning_rate_at(c, 75), 0.5, 1e-12);
  EXPECT_LT(learning_rate_at(c, 99), 0.01);
}

TEST(Training, ClosedFormLossWithStubNetwork) {
  const Model m = init_model(small_config(), 0.5, 1);  // out layer is zero, so x0_hat = c_skip x_tau
  Rng rng(8);
  const Tensor x0 = random_tensor({4, 32}, rng);
  const double sigma = 0.05;
  Rng noise_rng(9);
  const Tensor x_tau = forward_noise(x0, sigma, noise_rng);
  Rng eps_rng(9);
  const double cs = m.precond.c_skip(sigma);
  double expect = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double eps = standard_normal(eps_rng);
    const double r = (cs - 1.0) * x0[i] + sigma * cs * eps;
    expect += r * r;
  }
  expect *= m.precond.loss_weight(sigma) / double(x0.size());
  const double got = example_loss(m, x0, FrequencyMask::all(m.config.spectrum_meta().bins()), sigma, x_tau);
  EXPECT_NEAR(got, expect, 1e-12 * expect);
}

TEST(Training, ResultIndependentOfThreadCount) {
  Rng rng(10);
  std::vector<Tensor> data;
  for (int i = 0; i < 6; ++i) data.push_back(random_tensor({4, 32}, rng));
  auto run = [&](std::size_t threads) {
    TrainConfig c;
    c.batch_size = 5;
    c.total_steps = 10;
    c.decay_steps = 5;
    c.warmup_steps = 2;
    c.learning_rate = 1e-3;
    c.threads = threads;
    c.seed = 77;
    Trainer t(init_model(small_config(), 0.5, 3), c);
    std::vector<double> losses;
    for (int s = 0; s < 4; ++s) losses.push_back(t.step_on(data).loss);
    return std::pair{losses, t.ema().denoiser.out_w};
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Training, NonFiniteLossAborts) {
  TrainConfig c;
  c.batch_size = 2;
  c.total_steps = 10;
  c.decay_steps = 0;
  Trainer t(init_model(small_config(), 0.5, 3), c);
  std::vector<Tensor> data{Tensor::matrix(4, 32, 1e300)};
  EXPECT_THROW(t.step_on(data), training_aborted_error);
}

TEST(Training, OverfitsSingleClip) {
  Rng rng(11);
  const std::vector<Tensor> data{random_tensor({4, 32}, rng)};
  TrainConfig c;
  c.batch_size = 4;
  c.total_steps = 5000;
  c.decay_steps = 1000;
  c.warmup_steps = 50;
  c.learning_rate = 3e-3;
  c.seed = 5;
  ModelConfig wide = small_config();
  wide.decoder_hidden = 32;
  Trainer t(init_model(wide, 1.0, 2), c);
  std::vector<double> losses;
  for (std::size_t s = 0; s < c.total_steps; ++s) losses.push_back(t.step_on(data).loss);
  auto window_mean = [&](std::size_t lo) {
    double m = 0.0;
    for (std::size_t i = lo; i < lo + 50; ++i) m += losses[i];
    return m / 50.0;
  };
  const double first = window_mean(0), last = window_mean(losses.size() - 50);
  EXPECT_LT(last, 0.1 * first) << "first " << first << " last " << last;
}

TEST(Training, ConfigValidation) {
  TrainConfig c;
  c.decay_steps = c.total_steps + 1;
  EXPECT_THROW(Trainer(init_model(small_config(), 0.5, 1), c), config_error);
}
