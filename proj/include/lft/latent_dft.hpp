#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <limits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lft/error.hpp"
#include "lft/fft.hpp"
#include "lft/tensor.hpp"

namespace lft {

// Latent time series: C' channels by T' frames at `frame_rate_hz`.
struct LatentSequence {
  Tensor values;
  double frame_rate_hz = 1.0;

  std::size_t channels() const { return values.rows(); }
  std::size_t frames() const { return values.cols(); }
};

// Everything needed to place spectrum bins on the Hz axis.
struct SpectrumMeta {
  std::size_t frames = 0;      // T', before padding
  std::size_t pad_factor = 2;  // L
  double frame_rate_hz = 1.0;  // f_r

  std::size_t padded_length() const { return pad_factor * frames; }
  std::size_t bins() const { return padded_length() / 2 + 1; }
  double bin_spacing_hz() const { return frame_rate_hz / static_cast<double>(padded_length()); }
  double nyquist_hz() const { return frame_rate_hz / 2.0; }

  friend bool operator==(const SpectrumMeta&, const SpectrumMeta&) = default;
};

inline void validate(const SpectrumMeta& meta) {
  if (meta.frames < 2) {
    throw config_error("latent sequence needs at least 2 frames");
  }
  if (meta.pad_factor < 1) {
    throw config_error("pad factor must be >= 1");
  }
  if (!(meta.frame_rate_hz > 0.0) || !std::isfinite(meta.frame_rate_hz)) {
    throw config_error("frame rate must be positive");
  }
}

// Half spectrum (bins 0..F-1) of every channel of a zero-padded latent sequence.
struct LatentSpectrum {
  std::size_t channels = 0;
  SpectrumMeta meta;
  std::vector<cplx> coeffs;  // channels x F, row-major

  std::size_t bins() const { return meta.bins(); }
  cplx& at(std::size_t c, std::size_t k) { return coeffs[c * bins() + k]; }
  const cplx& at(std::size_t c, std::size_t k) const { return coeffs[c * bins() + k]; }
};

inline double bin_frequency(std::size_t k, const SpectrumMeta& meta) {
  if (k >= meta.bins()) {
    throw index_error("bin " + std::to_string(k) + " outside [0, " + std::to_string(meta.bins()) + ")");
  }
  return static_cast<double>(k) * meta.frame_rate_hz / static_cast<double>(meta.padded_length());
}

inline std::vector<double> bin_frequencies(const SpectrumMeta& meta) {
  std::vector<double> f(meta.bins());
  for (std::size_t k = 0; k < f.size(); ++k) {
    f[k] = bin_frequency(k, meta);
  }
  return f;
}

// Zero-pads each channel at its end to L*T' samples and takes the DFT.
inline LatentSpectrum analyze(const LatentSequence& z, std::size_t pad_factor) {
  const SpectrumMeta meta{z.frames(), pad_factor, z.frame_rate_hz};
  validate(meta);
  if (z.values.rank() != 2) {
    throw dimension_error("latent sequence must be a C' x T' matrix");
  }
  if (!z.values.all_finite()) {
    throw numeric_error("analyze: latent sequence has non-finite values");
  }
  const std::size_t n = meta.padded_length();
  const std::size_t nbins = meta.bins();
  const FftPlan& plan = fft_plan(n);

  LatentSpectrum out{z.channels(), meta, std::vector<cplx>(z.channels() * nbins)};
  std::vector<cplx> buf(n);
  for (std::size_t c = 0; c < z.channels(); ++c) {
    std::fill(buf.begin(), buf.end(), cplx{});
    for (std::size_t t = 0; t < meta.frames; ++t) {
      buf[t] = z.values(c, t);
    }
    plan.forward(buf);
    for (std::size_t k = 0; k < nbins; ++k) {
      out.at(c, k) = buf[k];
    }
    // Real input: DC and Nyquist are real up to rounding.
    out.at(c, 0).imag(0.0);
    if (n % 2 == 0) {
      out.at(c, nbins - 1).imag(0.0);
    }
  }
  return out;
}

// Inverse DFT of the Hermitian extension, truncated back to T' frames.
inline LatentSequence synthesize(const LatentSpectrum& spec) {
  const SpectrumMeta& meta = spec.meta;
  validate(meta);
  const std::size_t n = meta.padded_length();
  const std::size_t nbins = meta.bins();
  if (spec.coeffs.size() != spec.channels * nbins) {
    throw dimension_error("spectrum holds " + std::to_string(spec.coeffs.size()) + " coefficients, expected " +
                          std::to_string(spec.channels * nbins));
  }
  const FftPlan& plan = fft_plan(n);

  LatentSequence out{Tensor::matrix(spec.channels, meta.frames), meta.frame_rate_hz};
  std::vector<cplx> buf(n);
  double residue = 0.0;
  double norm2 = 0.0;
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t k = 0; k < nbins; ++k) {
      buf[k] = spec.at(c, k);
    }
    for (std::size_t k = nbins; k < n; ++k) {
      buf[k] = std::conj(spec.at(c, n - k));
    }
    plan.inverse(buf);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double re = buf[t].real() * inv_n;
      residue = std::max(residue, std::abs(buf[t].imag() * inv_n));
      norm2 += re * re;
      if (t < meta.frames) {
        out.values(c, t) = re;
      }
    }
  }
  if (residue > 1e-9 * std::sqrt(norm2)) {
    throw spectrum_corruption_error("synthesize: imaginary residue " + std::to_string(residue) +
                                    " (non-Hermitian DC or Nyquist bin?)");
  }
  return out;
}

// Bins with lo <= f_k < hi. The top bin is included when hi reaches it, so a
// band ending at Nyquist covers the Nyquist bin.
inline std::vector<std::size_t> band_to_bins(double lo_hz, double hi_hz, const SpectrumMeta& meta) {
  if (!(lo_hz >= 0.0) || !(hi_hz > lo_hz)) {
    throw config_error("band must satisfy 0 <= lo < hi, got [" + std::to_string(lo_hz) + ", " +
                       std::to_string(hi_hz) + ")");
  }
  std::vector<std::size_t> bins;
  const std::size_t last = meta.bins() - 1;
  for (std::size_t k = 0; k <= last; ++k) {
    const double f = bin_frequency(k, meta);
    if (f >= lo_hz && (f < hi_hz || (k == last && f <= hi_hz))) {
      bins.push_back(k);
    }
  }
  return bins;
}

using Band = std::pair<double, double>;

// [0, floor) followed by n-1 bands of equal width on a log axis up to Nyquist.
inline std::vector<Band> log_band_partition(std::size_t n_bands, const SpectrumMeta& meta, double floor_hz) {
  if (n_bands < 1) {
    throw config_error("need at least one band");
  }
  if (n_bands > meta.bins()) {
    throw config_error(std::to_string(n_bands) + " bands exceed " + std::to_string(meta.bins()) + " spectrum bins");
  }
  const double nyq = meta.nyquist_hz();
  if (n_bands == 1) {
    return {{0.0, nyq}};
  }
  if (!(floor_hz > 0.0 && floor_hz < nyq)) {
    throw config_error("log partition floor must lie in (0, Nyquist)");
  }
  std::vector<Band> bands{{0.0, floor_hz}};
  const double log_lo = std::log(floor_hz);
  const double step = (std::log(nyq) - log_lo) / static_cast<double>(n_bands - 1);
  double lo = floor_hz;
  for (std::size_t i = 1; i < n_bands; ++i) {
    const double hi = (i + 1 == n_bands) ? nyq : std::exp(log_lo + step * static_cast<double>(i));
    bands.emplace_back(lo, hi);
    lo = hi;
  }
  return bands;
}

// ---------------------------------------------------------------------------
// Persistence: <stem>.lft holds [2 x C' x F] (real, imag); <stem>.json the meta.

inline nlohmann::json to_json(const SpectrumMeta& meta) {
  return {{"frames", meta.frames}, {"pad_factor", meta.pad_factor}, {"frame_rate_hz", meta.frame_rate_hz}};
}

inline SpectrumMeta spectrum_meta_from_json(const nlohmann::json& j) {
  SpectrumMeta meta{j.at("frames").get<std::size_t>(), j.at("pad_factor").get<std::size_t>(),
                    j.at("frame_rate_hz").get<double>()};
  validate(meta);
  return meta;
}

inline void save_spectrum(const std::filesystem::path& stem, const LatentSpectrum& spec) {
  const std::size_t nbins = spec.bins();
  Tensor stacked(Shape{2, spec.channels, nbins});
  for (std::size_t i = 0; i < spec.coeffs.size(); ++i) {
    stacked[i] = spec.coeffs[i].real();
    stacked[spec.coeffs.size() + i] = spec.coeffs[i].imag();
  }
  auto tensor_path = stem;
  tensor_path += ".lft";
  save_tensor(tensor_path, stacked);
  auto json_path = stem;
  json_path += ".json";
  std::ofstream(json_path) << to_json(spec.meta).dump(2) << '\n';
}

inline LatentSpectrum load_spectrum(const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  std::ifstream in(json_path);
  if (!in) {
    throw io_error("cannot open " + json_path.string());
  }
  const SpectrumMeta meta = spectrum_meta_from_json(nlohmann::json::parse(in));
  auto tensor_path = stem;
  tensor_path += ".lft";
  const Tensor stacked = load_tensor(tensor_path);
  if (stacked.rank() != 3 || stacked.dim(0) != 2 || stacked.dim(2) != meta.bins()) {
    throw dimension_error("spectrum tensor shape " + shape_string(stacked.shape()) + " does not match meta");
  }
  LatentSpectrum spec{stacked.dim(1), meta, std::vector<cplx>(stacked.dim(1) * meta.bins())};
  for (std::size_t i = 0; i < spec.coeffs.size(); ++i) {
    spec.coeffs[i] = cplx(stacked[i], stacked[spec.coeffs.size() + i]);
  }
  return spec;
}

}  // namespace lft
