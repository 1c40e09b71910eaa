#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lft/autodiff.hpp"
#include "lft/error.hpp"
#include "lft/freq_mask.hpp"
#include "lft/net.hpp"
#include "lft/rng.hpp"
#include "lft/tensor.hpp"

namespace lft {

// Decreasing noise levels sigma_0 = sigma_max > ... > sigma_N = 0.
struct NoiseSchedule {
  std::vector<double> sigmas;
  double rho = 7.0;
  double sigma_min = 0.002;
  double sigma_max = 80.0;

  std::size_t steps() const { return sigmas.empty() ? 0 : sigmas.size() - 1; }
};

inline void validate(const NoiseSchedule& s) {
  if (s.sigmas.size() < 2 || s.sigmas.back() != 0.0) {
    throw config_error("noise schedule must end with sigma = 0");
  }
  for (std::size_t i = 1; i < s.sigmas.size(); ++i) {
    if (!(s.sigmas[i] < s.sigmas[i - 1])) {
      throw config_error("noise schedule must be strictly decreasing");
    }
  }
}

inline NoiseSchedule karras_schedule(std::size_t n, double sigma_min = 0.002, double sigma_max = 80.0,
                                     double rho = 7.0) {
  if (n == 0) {
    throw config_error("noise schedule needs at least one step");
  }
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !(rho > 0.0)) {
    throw config_error("noise schedule needs 0 < sigma_min < sigma_max and rho > 0");
  }
  NoiseSchedule s{std::vector<double>(n + 1, 0.0), rho, sigma_min, sigma_max};
  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  s.sigmas[0] = sigma_max;
  for (std::size_t i = 1; i < n; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
    s.sigmas[i] = std::pow(hi + frac * (lo - hi), rho);
  }
  if (n > 1) {
    s.sigmas[n - 1] = sigma_min;
  }
  s.sigmas[n] = 0.0;
  return s;
}

inline Tensor forward_noise(const Tensor& x0, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) {
    throw domain_error("forward_noise: sigma must be >= 0");
  }
  Tensor out = x0;
  if (sigma == 0.0) {
    return out;
  }
  for (double& v : out.values()) {
    v += sigma * standard_normal(rng);
  }
  return out;
}

// Training noise distribution: ln sigma ~ N(p_mean, p_std^2), clipped to sigma_max.
struct SigmaDistribution {
  double p_mean = -1.2;
  double p_std = 1.2;
  double sigma_max = 80.0;

  double sample(Rng& rng) const { return std::min(std::exp(p_mean + p_std * standard_normal(rng)), sigma_max); }
};

inline double sample_sigma(Rng& rng, const SigmaDistribution& dist = {}) { return dist.sample(rng); }

// ---------------------------------------------------------------------------
// Probability-flow ODE samplers

// Clean-signal estimate at noise level sigma for the current state x.
using Denoiser = std::function<Tensor(const Tensor& x, double sigma)>;

namespace detail {

// Weighted denoiser output: mean = sum_c w_c D_c(x, sigma), total = sum_c w_c.
struct WeightedEstimate {
  Tensor mean;
  double total = 0.0;
};

inline WeightedEstimate weighted_estimate(const std::vector<Denoiser>& denoisers, std::span<const double> weights,
                                          const Tensor& x, double sigma) {
  WeightedEstimate e{Tensor(x.shape()), 0.0};
  for (std::size_t c = 0; c < denoisers.size(); ++c) {
    const Tensor x0_hat = denoisers[c](x, sigma);
    if (x0_hat.shape() != x.shape()) {
      throw dimension_error("denoiser returned " + shape_string(x0_hat.shape()) + " for state " +
                            shape_string(x.shape()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      e.mean[i] = c == 0 ? weights[0] * x0_hat[i] : e.mean[i] + weights[c] * x0_hat[i];
    }
    e.total += weights[c];
  }
  return e;
}

// d = sum_c w_c (x - D_c(x, sigma)) / sigma
inline Tensor weighted_derivative(const std::vector<Denoiser>& denoisers, std::span<const double> weights,
                                  const Tensor& x, double sigma) {
  const WeightedEstimate e = weighted_estimate(denoisers, weights, x, sigma);
  Tensor d(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    d[i] = (e.total * x[i] - e.mean[i]) / sigma;
  }
  return d;
}

inline void check_finite(const Tensor& x, std::size_t step) {
  if (!x.all_finite()) {
    throw sampler_divergence_error(step, "sampler state became non-finite at step " + std::to_string(step));
  }
}

}  // namespace detail

// Euler steps along the blended derivative, optionally with Heun's trapezoidal
// correction whenever the next sigma is nonzero. x starts at N(0, sigma_max^2).
// The Euler step x + (s' - s) d is evaluated as x (1 + r W) - r D with r = s'/s - 1,
// which lands exactly on the weighted estimate D when s' = 0 and W = 1.
inline Tensor sample_ode_weighted(const std::vector<Denoiser>& denoisers, std::span<const double> weights,
                                  const Shape& shape, const NoiseSchedule& schedule, Rng& rng, bool heun) {
  validate(schedule);
  if (denoisers.empty() || denoisers.size() != weights.size()) {
    throw config_error("sampler needs one weight per denoiser");
  }
  Tensor x(shape);
  for (double& v : x.values()) {
    v = schedule.sigmas[0] * standard_normal(rng);
  }
  for (std::size_t i = 0; i + 1 < schedule.sigmas.size(); ++i) {
    const double s = schedule.sigmas[i];
    const double s_next = schedule.sigmas[i + 1];
    const double dt = s_next - s;
    const double r = dt / s;
    const detail::WeightedEstimate e = detail::weighted_estimate(denoisers, weights, x, s);
    Tensor x_next(x.shape());
    for (std::size_t j = 0; j < x.size(); ++j) {
      x_next[j] = x[j] * (1.0 + r * e.total) - r * e.mean[j];
    }
    if (heun && s_next > 0.0) {
      const Tensor d2 = detail::weighted_derivative(denoisers, weights, x_next, s_next);
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double d = (e.total * x[j] - e.mean[j]) / s;
        x_next[j] = x[j] + dt * (0.5 * d + 0.5 * d2[j]);
      }
    }
    detail::check_finite(x_next, i);
    x = std::move(x_next);
  }
  return x;
}

inline Tensor ode_sample(const Denoiser& denoiser, const Shape& shape, const NoiseSchedule& schedule, Rng& rng,
                         bool heun = true) {
  const double one = 1.0;
  return sample_ode_weighted({denoiser}, std::span<const double>(&one, 1), shape, schedule, rng, heun);
}

inline Tensor blend_sample(const Denoiser& first, const Denoiser& second, double alpha, double beta,
                           const Shape& shape, const NoiseSchedule& schedule, Rng& rng, bool heun = true) {
  const double w[2] = {alpha, beta};
  return sample_ode_weighted({first, second}, std::span<const double>(w, 2), shape, schedule, rng, heun);
}

// Denoiser conditioned on a fixed masked latent.
inline Denoiser conditioned_denoiser(const Model& model, LatentSequence z_masked) {
  if (z_masked.channels() != model.config.latent_channels) {
    throw dimension_error("latent has " + std::to_string(z_masked.channels()) + " channels, model expects " +
                          std::to_string(model.config.latent_channels));
  }
  return [&model, z = std::move(z_masked)](const Tensor& x, double sigma) { return denoise(z, x, sigma, model); };
}

inline Shape clip_shape(const Model& model, const LatentSequence& z) { return {model.config.channels, z.frames()}; }

inline Tensor ode_sample(const LatentSequence& z_masked, const NoiseSchedule& schedule, const Model& model, Rng& rng,
                         bool heun = true) {
  return ode_sample(conditioned_denoiser(model, z_masked), clip_shape(model, z_masked), schedule, rng, heun);
}

inline Tensor blend_sample(const LatentSequence& z1_masked, const LatentSequence& z2_masked,
                           const NoiseSchedule& schedule, const Model& model, double alpha, double beta, Rng& rng,
                           bool heun = true) {
  if (z1_masked.values.shape() != z2_masked.values.shape()) {
    throw dimension_error("blend: latents differ in shape");
  }
  return blend_sample(conditioned_denoiser(model, z1_masked), conditioned_denoiser(model, z2_masked), alpha, beta,
                      clip_shape(model, z1_masked), schedule, rng, heun);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 5000;
  std::size_t decay_steps = 2500;  // cosine decay over the final decay_steps
  double grad_clip = 1.0;
  double ema_decay = 0.999;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  SigmaDistribution sigma_dist;
  KernelOptions kernel;  // sigma 0.5, p 2, eps 1e-6
  bool clamp_threshold = true;
  bool no_masking = false;
  bool no_correlation = false;
  bool no_log_scale = false;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size == 0 || c.total_steps == 0 || c.threads == 0) {
    throw config_error("batch size, total steps and threads must be positive");
  }
  if (!(c.learning_rate > 0.0) || !(c.grad_clip > 0.0) || !(c.ema_decay >= 0.0 && c.ema_decay < 1.0)) {
    throw config_error("learning rate and grad clip must be positive, EMA decay in [0, 1)");
  }
  if (c.decay_steps > c.total_steps) {
    throw config_error("decay steps exceed total steps");
  }
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps},
          {"decay_steps", c.decay_steps},
          {"grad_clip", c.grad_clip},
          {"ema_decay", c.ema_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"p_mean", c.sigma_dist.p_mean},
          {"p_std", c.sigma_dist.p_std},
          {"sigma_max", c.sigma_dist.sigma_max},
          {"kernel_sigma", c.kernel.sigma},
          {"kernel_power", c.kernel.power},
          {"kernel_eps", c.kernel.eps},
          {"clamp_threshold", c.clamp_threshold},
          {"no_masking", c.no_masking},
          {"no_correlation", c.no_correlation},
          {"no_log_scale", c.no_log_scale},
          {"seed", c.seed}};
}

// Missing keys keep the values already in `c`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.decay_steps = j.value("decay_steps", c.decay_steps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.sigma_dist.p_mean = j.value("p_mean", c.sigma_dist.p_mean);
  c.sigma_dist.p_std = j.value("p_std", c.sigma_dist.p_std);
  c.sigma_dist.sigma_max = j.value("sigma_max", c.sigma_dist.sigma_max);
  c.kernel.sigma = j.value("kernel_sigma", c.kernel.sigma);
  c.kernel.power = j.value("kernel_power", c.kernel.power);
  c.kernel.eps = j.value("kernel_eps", c.kernel.eps);
  c.clamp_threshold = j.value("clamp_threshold", c.clamp_threshold);
  c.no_masking = j.value("no_masking", c.no_masking);
  c.no_correlation = j.value("no_correlation", c.no_correlation);
  c.no_log_scale = j.value("no_log_scale", c.no_log_scale);
  c.seed = j.value("seed", c.seed);
  return c;
}

// Linear warmup, constant, then cosine decay to zero over the last decay_steps.
inline double learning_rate_at(const TrainConfig& c, std::size_t step) {
  double lr = c.learning_rate;
  if (c.warmup_steps > 0 && step < c.warmup_steps) {
    lr *= static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  const std::size_t decay_start = c.total_steps - c.decay_steps;
  if (c.decay_steps > 0 && step >= decay_start) {
    const double frac = static_cast<double>(step - decay_start) / static_cast<double>(c.decay_steps);
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(frac, 1.0)));
  }
  return lr;
}

inline KernelOptions effective_kernel_options(const TrainConfig& c) {
  KernelOptions k = c.kernel;
  k.correlate = k.correlate && !c.no_correlation;
  k.log_axis = k.log_axis && !c.no_log_scale;
  return k;
}

// lambda(sigma) * mean((D(z_masked, x_tau, sigma) - x0)^2) on the tape, with the
// mask applied between encoder and denoiser.
inline Var example_loss_on_tape(Tape& tape, const ModelVars& vars, const Model& model, const Tensor& x0,
                                const FrequencyMask& mask, double sigma, const Tensor& x_tau) {
  const Var z = encode_on_tape(tape, vars, tape.constant_ref(x0));
  const Var z_masked = mask_on_tape(tape, z, mask, model.config.pad_factor, model.config.frame_rate_hz);
  const Var x0_hat = denoise_on_tape(tape, vars, model, z_masked, x_tau, sigma);
  return weighted_mse(tape, x0_hat, x0, model.precond.loss_weight(sigma));
}

inline double example_loss(const Model& model, const Tensor& x0, const FrequencyMask& mask, double sigma,
                           const Tensor& x_tau) {
  Tape tape(false);
  const ModelVars vars = bind_const(tape, model);
  return tape.value(example_loss_on_tape(tape, vars, model, x0, mask, sigma, x_tau)).item();
}

struct StepReport {
  std::size_t step = 0;
  double loss = 0.0;  // batch mean, before the update
  double lr = 0.0;
  double mask_density = 0.0;
  double grad_norm = 0.0;
};

inline void write_log_header(std::ostream& out) { out << "step,loss,lr,mask_density\n"; }
inline void write_log_row(std::ostream& out, const StepReport& r) {
  out << r.step << ',' << r.loss << ',' << r.lr << ',' << r.mask_density << '\n';
}

// Owns the live weights, EMA (inference) weights, and Adam state.
//
// Each example's gradient lands in its own buffer and buffers are summed in
// example order, so results do not depend on the worker count.
class Trainer {
 public:
  Trainer(Model init, TrainConfig config)
      : config_(std::move(config)),
        model_(std::move(init)),
        ema_(model_),
        kernel_(build_kernel(model_.config.spectrum_meta(), effective_kernel_options(config_))) {
    validate(config_);
    for (Tensor* p : model_.parameters()) {
      adam_m_.emplace_back(p->size(), 0.0);
      adam_v_.emplace_back(p->size(), 0.0);
    }
  }

  const Model& model() const { return model_; }
  const Model& ema() const { return ema_; }
  const TrainConfig& config() const { return config_; }
  const MaskKernel& kernel() const { return kernel_; }
  std::size_t step() const { return step_; }

  // One optimizer step on a batch drawn uniformly (with replacement) from `data`.
  StepReport step_on(const std::vector<Tensor>& data) {
    if (data.empty()) {
      throw config_error("training set is empty");
    }
    Rng pick = make_rng(config_.seed, 0xba7c0000ULL + step_);
    std::uniform_int_distribution<std::size_t> index(0, data.size() - 1);
    std::vector<const Tensor*> batch(config_.batch_size);
    for (auto& b : batch) {
      b = &data[index(pick)];
    }
    return train_step(batch);
  }

  StepReport train_step(std::span<const Tensor* const> batch) {
    if (batch.empty()) {
      throw config_error("empty batch");
    }
    const std::size_t n = batch.size();
    std::vector<ExampleResult> results(n);
    const std::size_t workers = std::min(config_.threads, n);

    auto run_range = [&](std::size_t lo, std::size_t hi) {
      Model scratch = model_;
      for (std::size_t i = lo; i < hi; ++i) {
        results[i] = run_example(scratch, *batch[i], i);
      }
    };
    if (workers <= 1) {
      run_range(0, n);
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (n + workers - 1) / workers;
      for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo < hi) {
          pool.emplace_back(run_range, lo, hi);
        }
      }
      for (auto& t : pool) {
        t.join();
      }
    }

    StepReport report;
    report.step = step_;
    report.lr = learning_rate_at(config_, step_);
    for (const auto& r : results) {
      report.loss += r.loss;
      report.mask_density += r.mask_density;
    }
    report.loss /= static_cast<double>(n);
    report.mask_density /= static_cast<double>(n);
    if (!std::isfinite(report.loss)) {
      std::ostringstream diag;
      diag << "non-finite training loss at step " << step_ << ";";
      for (const auto& r : results) {
        diag << " (sigma=" << r.sigma << ", mask_density=" << r.mask_density << ", loss=" << r.loss << ")";
      }
      throw training_aborted_error(diag.str());
    }

    // Mean gradient, reduced in example order.
    const auto params = model_.parameters();
    std::vector<std::vector<double>> grad(params.size());
    double norm2 = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      grad[p].assign(params[p]->size(), 0.0);
      for (const auto& r : results) {
        const auto& g = r.grads[p];
        for (std::size_t j = 0; j < g.size(); ++j) {
          grad[p][j] += g[j];
        }
      }
      for (double& g : grad[p]) {
        g /= static_cast<double>(n);
        norm2 += g * g;
      }
    }
    report.grad_norm = std::sqrt(norm2);
    const double clip = report.grad_norm > config_.grad_clip ? config_.grad_clip / report.grad_norm : 1.0;

    ++step_;
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const auto ema_params = ema_.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& w = params[p]->values();
      auto& m = adam_m_[p];
      auto& v = adam_v_[p];
      auto& e = ema_params[p]->values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = grad[p][j] * clip;
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        w[j] -= report.lr * (m[j] / bias1) / (std::sqrt(v[j] / bias2) + config_.adam_eps);
        e[j] = config_.ema_decay * e[j] + (1.0 - config_.ema_decay) * w[j];
      }
    }
    return report;
  }

 private:
  struct ExampleResult {
    double loss = 0.0;
    double sigma = 0.0;
    double mask_density = 0.0;
    std::vector<std::vector<double>> grads;
  };

  ExampleResult run_example(Model& scratch, const Tensor& x0, std::size_t index) const {
    Rng rng = make_rng(derive_seed(config_.seed, step_), index);
    const FrequencyMask mask = config_.no_masking
                                   ? FrequencyMask::all(kernel_.bins)
                                   : sample_training_mask(kernel_, rng, MaskSampling{config_.clamp_threshold});
    const double sigma = config_.sigma_dist.sample(rng);
    const Tensor x_tau = forward_noise(x0, sigma, rng);

    for (Tensor* p : scratch.parameters()) {
      p->zero_grad();
    }
    ExampleResult r{0.0, sigma, mask.density(), {}};
    try {
      Tape tape;
      const ModelVars vars = bind(tape, scratch, true);
      const Var loss = example_loss_on_tape(tape, vars, scratch, x0, mask, sigma, x_tau);
      r.loss = tape.value(loss).item();
      if (!std::isfinite(r.loss)) {
        return r;
      }
      tape.backward(loss);
    } catch (const numeric_error&) {
      r.loss = std::numeric_limits<double>::quiet_NaN();
      return r;
    }
    for (Tensor* p : scratch.parameters()) {
      r.grads.push_back(p->grad());
    }
    return r;
  }

  TrainConfig config_;
  Model model_;
  Model ema_;
  MaskKernel kernel_;
  std::vector<std::vector<double>> adam_m_, adam_v_;
  std::size_t step_ = 0;
};

}  // namespace lft
