#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lft/error.hpp"
#include "lft/latent_dft.hpp"
#include "lft/rng.hpp"

namespace lft {

// Binary keep-vector over spectrum bins, shared by all latent channels.
struct FrequencyMask {
  std::vector<std::uint8_t> keep;
  std::vector<Band> bands_hz;  // annotations for user masks; empty otherwise

  std::size_t size() const { return keep.size(); }
  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1)); }
  double density() const { return keep.empty() ? 0.0 : static_cast<double>(kept()) / static_cast<double>(size()); }

  static FrequencyMask all(std::size_t bins) { return {std::vector<std::uint8_t>(bins, 1), {}}; }
  static FrequencyMask none(std::size_t bins) { return {std::vector<std::uint8_t>(bins, 0), {}}; }

  friend bool operator==(const FrequencyMask& a, const FrequencyMask& b) { return a.keep == b.keep; }
};

struct KernelOptions {
  double sigma = 0.5;
  double power = 2.0;
  double eps = 1e-6;
  bool log_axis = true;
  bool correlate = true;
};

// Row-normalized RBF matrix over bin coordinates; identity when uncorrelated.
struct MaskKernel {
  std::size_t bins = 0;
  KernelOptions options;
  Eigen::MatrixXd matrix;
};

inline MaskKernel build_kernel(const std::vector<double>& bin_freqs_hz, const KernelOptions& opt = {}) {
  if (!(opt.sigma > 0.0) || !(opt.eps > 0.0) || !(opt.power > 0.0)) {
    throw config_error("mask kernel needs sigma > 0, eps > 0, power > 0");
  }
  const std::size_t n = bin_freqs_hz.size();
  if (n == 0) {
    throw config_error("mask kernel needs at least one bin");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(bin_freqs_hz[i] > bin_freqs_hz[i - 1])) {
      throw config_error("mask kernel frequency grid must be strictly increasing");
    }
  }
  MaskKernel kernel{n, opt, Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))};
  if (!opt.correlate) {
    return kernel;
  }
  std::vector<double> coord(n);
  for (std::size_t i = 0; i < n; ++i) {
    coord[i] = opt.log_axis ? std::log(bin_freqs_hz[i] + opt.eps) : bin_freqs_hz[i];
  }
  const double denom = 2.0 * std::pow(opt.sigma, opt.power);
  for (std::size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = std::exp(-std::pow(std::abs(coord[i] - coord[j]), opt.power) / denom);
      kernel.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      norm2 += v * v;
    }
    kernel.matrix.row(static_cast<Eigen::Index>(i)) /= std::sqrt(norm2);
  }
  return kernel;
}

inline MaskKernel build_kernel(const SpectrumMeta& meta, const KernelOptions& opt = {}) {
  return build_kernel(bin_frequencies(meta), opt);
}

struct MaskSampling {
  bool clamp_threshold = true;  // clamp eta to [-6, 6]
};

// s = K u with u ~ N(0, I).
inline Eigen::VectorXd sample_scores(const MaskKernel& kernel, Rng& rng) {
  Eigen::VectorXd u(static_cast<Eigen::Index>(kernel.bins));
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u(i) = standard_normal(rng);
  }
  if (!kernel.options.correlate) {
    return u;
  }
  return kernel.matrix * u;
}

inline FrequencyMask threshold_scores(const Eigen::VectorXd& scores, double eta) {
  FrequencyMask mask{std::vector<std::uint8_t>(static_cast<std::size_t>(scores.size())), {}};
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    mask.keep[static_cast<std::size_t>(i)] = scores(i) > eta ? 1 : 0;
  }
  return mask;
}

// Training mask: eta ~ N(0, 1), s = K u, keep bins with s > eta.
inline FrequencyMask sample_training_mask(const MaskKernel& kernel, Rng& rng, const MaskSampling& opt = {}) {
  double eta = standard_normal(rng);
  if (opt.clamp_threshold) {
    eta = std::clamp(eta, -6.0, 6.0);
  }
  return threshold_scores(sample_scores(kernel, rng), eta);
}

inline FrequencyMask bins_mask(const std::vector<std::size_t>& bins, std::size_t total) {
  FrequencyMask mask = FrequencyMask::none(total);
  for (std::size_t k : bins) {
    if (k >= total) {
      throw index_error("mask bin " + std::to_string(k) + " outside [0, " + std::to_string(total) + ")");
    }
    mask.keep[k] = 1;
  }
  return mask;
}

// Union of Hz bands, clipped to [0, Nyquist]. Overlapping bands are rejected.
inline FrequencyMask user_mask(std::vector<Band> bands, const SpectrumMeta& meta) {
  const double nyq = meta.nyquist_hz();
  std::vector<Band> clipped;
  for (auto [lo, hi] : bands) {
    if (!(lo >= 0.0) || !(hi > lo)) {
      throw config_error("band must satisfy 0 <= lo < hi");
    }
    hi = std::min(hi, nyq);
    if (lo <= hi && !(lo == hi && lo < nyq)) {
      clipped.emplace_back(lo, hi);
    }
  }
  std::sort(clipped.begin(), clipped.end());
  for (std::size_t i = 1; i < clipped.size(); ++i) {
    if (clipped[i].first < clipped[i - 1].second) {
      throw config_error("mask bands overlap");
    }
  }
  FrequencyMask mask = FrequencyMask::none(meta.bins());
  for (const auto& [lo, hi] : clipped) {
    if (lo == hi) {
      // A band clipped to [nyq, nyq] still selects the Nyquist bin.
      if (std::abs(bin_frequency(meta.bins() - 1, meta) - nyq) < 1e-12 * nyq) {
        mask.keep.back() = 1;
      }
      continue;
    }
    for (std::size_t k : band_to_bins(lo, hi, meta)) {
      mask.keep[k] = 1;
    }
  }
  mask.bands_hz = std::move(bands);
  return mask;
}

// Zeroes masked coefficients in every channel.
inline LatentSpectrum apply_mask(LatentSpectrum spec, const FrequencyMask& mask) {
  if (mask.size() != spec.bins()) {
    throw dimension_error("mask has " + std::to_string(mask.size()) + " bins, spectrum has " +
                          std::to_string(spec.bins()));
  }
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t k = 0; k < spec.bins(); ++k) {
      if (!mask.keep[k]) {
        spec.at(c, k) = cplx{};
      }
    }
  }
  return spec;
}

// z -> synthesize(apply_mask(analyze(z, L), M)). Linear and self-adjoint in z.
inline LatentSequence mask_latent(const LatentSequence& z, const FrequencyMask& mask, std::size_t pad_factor) {
  return synthesize(apply_mask(analyze(z, pad_factor), mask));
}

// ---------------------------------------------------------------------------
// JSON: {"bands_hz": [[lo, hi], ...]} or {"bins": [k, ...]}

inline FrequencyMask mask_from_json(const nlohmann::json& j, const SpectrumMeta& meta) {
  if (j.contains("bands_hz")) {
    std::vector<Band> bands;
    for (const auto& b : j.at("bands_hz")) {
      if (!b.is_array() || b.size() != 2) {
        throw config_error("bands_hz entries must be [lo, hi] pairs");
      }
      bands.emplace_back(b[0].get<double>(), b[1].get<double>());
    }
    return user_mask(std::move(bands), meta);
  }
  if (j.contains("bins")) {
    return bins_mask(j.at("bins").get<std::vector<std::size_t>>(), meta.bins());
  }
  throw config_error("mask JSON needs a \"bands_hz\" or \"bins\" key");
}

inline nlohmann::json mask_to_json(const FrequencyMask& mask) {
  if (!mask.bands_hz.empty()) {
    nlohmann::json bands = nlohmann::json::array();
    for (const auto& [lo, hi] : mask.bands_hz) {
      bands.push_back({lo, hi});
    }
    return {{"bands_hz", bands}};
  }
  std::vector<std::size_t> bins;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask.keep[k]) {
      bins.push_back(k);
    }
  }
  return {{"bins", bins}};
}

}  // namespace lft
