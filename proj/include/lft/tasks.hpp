#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lft/diffusion.hpp"
#include "lft/error.hpp"
#include "lft/freq_mask.hpp"
#include "lft/metrics.hpp"
#include "lft/net.hpp"
#include "lft/parallel.hpp"
#include "lft/synth_data.hpp"

namespace lft {

struct SamplerConfig {
  std::size_t steps = 32;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  bool heun = true;
  std::size_t n_variations = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  NoiseSchedule schedule() const { return karras_schedule(steps, sigma_min, sigma_max, rho); }
};

inline nlohmann::json to_json(const SamplerConfig& c) {
  return {{"steps", c.steps}, {"sigma_min", c.sigma_min}, {"sigma_max", c.sigma_max}, {"rho", c.rho},
          {"heun", c.heun},   {"n_variations", c.n_variations}, {"seed", c.seed}};
}

inline SamplerConfig sampler_config_from_json(const nlohmann::json& j, SamplerConfig c = {}) {
  c.steps = j.value("steps", c.steps);
  c.sigma_min = j.value("sigma_min", c.sigma_min);
  c.sigma_max = j.value("sigma_max", c.sigma_max);
  c.rho = j.value("rho", c.rho);
  c.heun = j.value("heun", c.heun);
  c.n_variations = j.value("n_variations", c.n_variations);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline void check_mask(const FrequencyMask& mask, const Model& model) {
  if (mask.size() != model.config.spectrum_meta().bins()) {
    throw dimension_error("mask has " + std::to_string(mask.size()) + " bins, model spectrum has " +
                          std::to_string(model.config.spectrum_meta().bins()));
  }
}

// Variation i draws its initial noise from stream (seed, i) only.
inline std::vector<Tensor> conditional_generate(const Tensor& reference, const FrequencyMask& mask, const Model& model,
                                                const SamplerConfig& cfg) {
  check_mask(mask, model);
  const LatentSequence z = masked_latent(reference, mask, model);
  const NoiseSchedule schedule = cfg.schedule();
  std::vector<Tensor> out(cfg.n_variations);
  parallel_for(cfg.n_variations, cfg.threads, [&](std::size_t i) {
    Rng rng = make_rng(cfg.seed, i);
    out[i] = ode_sample(z, schedule, model, rng, cfg.heun);
  });
  return out;
}

inline bool masks_overlap(const FrequencyMask& a, const FrequencyMask& b) {
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) {
    if (a.keep[k] && b.keep[k]) {
      return true;
    }
  }
  return false;
}

using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_stderr(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

// Sampling guided by two masked latents with derivative alpha d1 + beta d2.
// Overlapping masks are allowed; they only produce a warning.
inline std::vector<Tensor> blend(const Tensor& first, const Tensor& second, const FrequencyMask& mask1,
                                 const FrequencyMask& mask2, double alpha, double beta, const Model& model,
                                 const SamplerConfig& cfg, const WarningSink& warn = warn_to_stderr) {
  check_mask(mask1, model);
  check_mask(mask2, model);
  if (masks_overlap(mask1, mask2) && warn) {
    warn("blend masks overlap");
  }
  const LatentSequence z1 = masked_latent(first, mask1, model);
  const LatentSequence z2 = masked_latent(second, mask2, model);
  const NoiseSchedule schedule = cfg.schedule();
  std::vector<Tensor> out(cfg.n_variations);
  parallel_for(cfg.n_variations, cfg.threads, [&](std::size_t i) {
    Rng rng = make_rng(cfg.seed, i);
    out[i] = blend_sample(z1, z2, schedule, model, alpha, beta, rng, cfg.heun);
  });
  return out;
}

// Self-blend of the full latent (weight alpha) with its bandpassed copy (weight
// beta); beta >> alpha isolates the band.
inline std::vector<Tensor> isolate(const Tensor& reference, const FrequencyMask& band, double alpha, double beta,
                                   const Model& model, const SamplerConfig& cfg) {
  if (alpha < 0.0 || beta < 0.0) {
    throw config_error("isolate: weights must be non-negative");
  }
  if (alpha == 0.0 && beta == 0.0) {
    throw config_error("isolate: alpha = beta = 0 gives no guidance");
  }
  const FrequencyMask full = FrequencyMask::all(model.config.spectrum_meta().bins());
  return blend(reference, reference, full, band, alpha, beta, model, cfg, nullptr);
}

// ---------------------------------------------------------------------------
// Frequency sweep

struct SweepRow {
  std::size_t bin_lo = 0;
  std::size_t bin_hi = 0;  // exclusive
  double center_hz = 0.0;
  std::vector<double> raw;       // per pattern; NaN when undefined
  std::vector<double> smoothed;  // per pattern
};

struct SweepResult {
  std::vector<PatternRecord> patterns;
  std::vector<SweepRow> rows;

  // Index of the row where pattern p's smoothed curve peaks.
  std::size_t argmax(std::size_t p) const {
    std::size_t best = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].smoothed[p] > rows[best].smoothed[p]) {
        best = r;
      }
    }
    return best;
  }
};

struct SweepConfig {
  std::size_t window_bins = 10;
  std::size_t stride = 10;
  double smoothing_std = 1.0;  // in rows; 0 disables
  SamplerConfig sampler;       // n_variations samples per window, averaged
};

// Gaussian smoothing over row index, renormalized at the edges; NaN entries skipped.
inline std::vector<double> gaussian_smooth(const std::vector<double>& v, double std_rows) {
  if (std_rows <= 0.0) {
    return v;
  }
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * std_rows));
  std::vector<double> out(v.size(), std::nan(""));
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(v.size()); ++i) {
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t j = i - radius; j <= i + radius; ++j) {
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(v.size()) || std::isnan(v[static_cast<std::size_t>(j)])) {
        continue;
      }
      const double d = static_cast<double>(j - i) / std_rows;
      const double w = std::exp(-0.5 * d * d);
      acc += w * v[static_cast<std::size_t>(j)];
      wsum += w;
    }
    if (wsum > 0.0) {
      out[static_cast<std::size_t>(i)] = acc / wsum;
    }
  }
  return out;
}

// Conditions on each window of latent bins in turn and scores how well every
// ground-truth pattern of the reference survives (pattern_preservation).
inline SweepResult sweep(const Tensor& reference, const std::vector<PatternRecord>& patterns, const Model& model,
                         const SweepConfig& cfg) {
  if (cfg.window_bins < 1 || cfg.stride < 1) {
    throw config_error("sweep window and stride must be >= 1");
  }
  const SpectrumMeta meta = model.config.spectrum_meta();
  const std::size_t F = meta.bins();
  const std::size_t window = std::min(cfg.window_bins, F);

  std::vector<Tensor> contributions;
  for (const auto& p : patterns) {
    contributions.push_back(render_pattern(p, reference.rows(), reference.cols(), model.config.frame_rate_hz));
  }

  std::vector<std::size_t> starts;
  for (std::size_t lo = 0; lo + window <= F; lo += cfg.stride) {
    starts.push_back(lo);
  }
  if (starts.back() + window < F) {
    starts.push_back(F - window);  // cover the top of the spectrum
  }

  SweepResult result{patterns, std::vector<SweepRow>(starts.size())};
  const LatentSequence z = encode(reference, model);
  const NoiseSchedule schedule = cfg.sampler.schedule();
  parallel_for(starts.size(), cfg.sampler.threads, [&](std::size_t w) {
    std::vector<std::size_t> bins;
    for (std::size_t k = starts[w]; k < starts[w] + window; ++k) {
      bins.push_back(k);
    }
    const LatentSequence zm = mask_latent(z, bins_mask(bins, F), meta.pad_factor);
    SweepRow& row = result.rows[w];
    row.bin_lo = starts[w];
    row.bin_hi = starts[w] + window;
    row.center_hz = 0.5 * (bin_frequency(row.bin_lo, meta) + bin_frequency(row.bin_hi - 1, meta));
    row.raw.assign(patterns.size(), 0.0);
    std::vector<std::size_t> defined(patterns.size(), 0);
    for (std::size_t v = 0; v < cfg.sampler.n_variations; ++v) {
      Rng rng = make_rng(cfg.sampler.seed, v);
      const Tensor gen = ode_sample(zm, schedule, model, rng, cfg.sampler.heun);
      for (std::size_t p = 0; p < patterns.size(); ++p) {
        if (const auto s = pattern_preservation(patterns[p], contributions[p], gen, model.config.frame_rate_hz)) {
          row.raw[p] += *s;
          ++defined[p];
        }
      }
    }
    for (std::size_t p = 0; p < patterns.size(); ++p) {
      row.raw[p] = defined[p] ? row.raw[p] / static_cast<double>(defined[p]) : std::nan("");
    }
  });

  for (std::size_t p = 0; p < patterns.size(); ++p) {
    std::vector<double> curve;
    for (const auto& row : result.rows) {
      curve.push_back(row.raw[p]);
    }
    const auto smooth = gaussian_smooth(curve, cfg.smoothing_std);
    for (std::size_t r = 0; r < result.rows.size(); ++r) {
      result.rows[r].smoothed.push_back(smooth[r]);
    }
  }
  return result;
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& res) {
  out << "bin_lo,bin_hi,center_hz";
  for (std::size_t p = 0; p < res.patterns.size(); ++p) {
    const std::string name = "p" + std::to_string(p) + "_" + to_string(res.patterns[p].kind);
    out << ',' << name << "_raw," << name << "_smoothed";
  }
  out << '\n';
  for (const auto& row : res.rows) {
    out << row.bin_lo << ',' << row.bin_hi << ',' << row.center_hz;
    for (std::size_t p = 0; p < res.patterns.size(); ++p) {
      out << ',' << row.raw[p] << ',' << row.smoothed[p];
    }
    out << '\n';
  }
}

}  // namespace lft
