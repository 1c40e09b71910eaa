#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "lft/error.hpp"
#include "lft/fft.hpp"
#include "lft/latent_dft.hpp"
#include "lft/synth_data.hpp"
#include "lft/tensor.hpp"

namespace lft {

enum class DescriptorKind { loudness, onset };

inline std::string to_string(DescriptorKind k) { return k == DescriptorKind::loudness ? "loudness" : "onset"; }

inline DescriptorKind descriptor_kind_from_string(const std::string& s) {
  if (s == "loudness") return DescriptorKind::loudness;
  if (s == "onset") return DescriptorKind::onset;
  throw config_error("unknown descriptor '" + s + "'");
}

struct DescriptorSignal {
  std::vector<double> values;
  DescriptorKind kind = DescriptorKind::loudness;
  double frame_rate_hz = 64.0;
};

inline constexpr double kLoudnessFloor = 1e-8;

// Per-frame log energy: log(eps + sum_c x[c, t]^2).
inline DescriptorSignal loudness_descriptor(const Tensor& x, double frame_rate_hz) {
  DescriptorSignal d{std::vector<double>(x.cols()), DescriptorKind::loudness, frame_rate_hz};
  for (std::size_t t = 0; t < x.cols(); ++t) {
    double e = 0.0;
    for (std::size_t c = 0; c < x.rows(); ++c) {
      e += x(c, t) * x(c, t);
    }
    d.values[t] = std::log(kLoudnessFloor + e);
  }
  return d;
}

// Half-wave rectified first difference of channel magnitudes, summed over channels.
inline DescriptorSignal onset_descriptor(const Tensor& x, double frame_rate_hz) {
  DescriptorSignal d{std::vector<double>(x.cols(), 0.0), DescriptorKind::onset, frame_rate_hz};
  for (std::size_t t = 1; t < x.cols(); ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.rows(); ++c) {
      s += std::max(0.0, std::abs(x(c, t)) - std::abs(x(c, t - 1)));
    }
    d.values[t] = s;
  }
  return d;
}

inline DescriptorSignal descriptor(const Tensor& x, DescriptorKind kind, double frame_rate_hz) {
  return kind == DescriptorKind::loudness ? loudness_descriptor(x, frame_rate_hz) : onset_descriptor(x, frame_rate_hz);
}

// Keeps only DFT bins with lo <= f < hi (top bin included when hi reaches it).
inline std::vector<double> bandpass(const std::vector<double>& signal, double frame_rate_hz, Band band) {
  const std::size_t n = signal.size();
  const SpectrumMeta meta{n, 1, frame_rate_hz};
  validate(meta);
  const double hi = std::min(band.second, meta.nyquist_hz());
  std::vector<std::uint8_t> keep(meta.bins(), 0);
  if (band.first <= hi) {
    for (std::size_t k : band_to_bins(band.first, std::max(hi, band.first + 1e-12), meta)) {
      keep[k] = 1;
    }
  }
  std::vector<cplx> buf(signal.begin(), signal.end());
  fft(buf);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t folded = std::min(k, n - k);
    if (!keep[folded]) {
      buf[k] = cplx{};
    }
  }
  ifft_unnormalized(buf);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = buf[i].real() / static_cast<double>(n);
  }
  return out;
}

// Pearson correlation; nullopt when either input has (numerically) zero variance.
inline std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw dimension_error("pearson: length mismatch");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  const double tiny = 1e-24 * n * (scale * scale + 1e-300);
  if (saa <= tiny || sbb <= tiny) {
    return std::nullopt;
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline std::optional<double> cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) {
    return std::nullopt;
  }
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

// Autocorrelation over lags 1..n/2 (beat spectrum of an onset envelope).
inline std::vector<double> beat_spectrum(const std::vector<double>& onset) {
  const std::size_t n = onset.size();
  std::vector<double> out(n / 2);
  for (std::size_t lag = 1; lag <= out.size(); ++lag) {
    double s = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) {
      s += onset[t] * onset[t + lag];
    }
    out[lag - 1] = s;
  }
  return out;
}

// Bandpassed descriptor adherence. Loudness: Pearson correlation. Onset: cosine
// similarity of the beat spectra of the bandpassed onset envelopes.
// nullopt marks an undefined value (zero-variance input); exclude it from aggregates.
inline std::optional<double> band_adherence(const Tensor& ref, const Tensor& gen, double frame_rate_hz, Band band,
                                            DescriptorKind kind) {
  if (ref.shape() != gen.shape()) {
    throw dimension_error("band_adherence: clips differ in shape");
  }
  if (band.first >= frame_rate_hz / 2.0 + 1e-12) {
    throw config_error("band starts above the descriptor Nyquist");
  }
  const auto dr = bandpass(descriptor(ref, kind, frame_rate_hz).values, frame_rate_hz, band);
  const auto dg = bandpass(descriptor(gen, kind, frame_rate_hz).values, frame_rate_hz, band);
  if (kind == DescriptorKind::loudness) {
    return pearson(dr, dg);
  }
  return cosine_similarity(beat_spectrum(dr), beat_spectrum(dg));
}

// How strongly a reference pattern survives in a generation: cosine similarity,
// over the pattern's channel span, between the reference's isolated contribution
// and the generation, both bandpassed to the DFT bins within one bin of the
// pattern rate (DC excluded).
inline std::optional<double> pattern_preservation(const PatternRecord& pattern, const Tensor& reference_contribution,
                                                  const Tensor& gen, double frame_rate_hz) {
  if (reference_contribution.shape() != gen.shape()) {
    throw dimension_error("pattern_preservation: shape mismatch");
  }
  const std::size_t T = gen.cols();
  const double spacing = frame_rate_hz / static_cast<double>(T);
  const double centre = pattern.rate_hz / spacing;
  const Band band{std::max(0.5, centre - 1.0) * spacing, (centre + 1.5) * spacing};
  std::vector<double> r_all, g_all;
  for (std::size_t c = pattern.channel_lo; c < pattern.channel_hi; ++c) {
    std::vector<double> r(T), g(T);
    for (std::size_t t = 0; t < T; ++t) {
      r[t] = reference_contribution(c, t);
      g[t] = gen(c, t);
    }
    const auto rb = bandpass(r, frame_rate_hz, band);
    const auto gb = bandpass(g, frame_rate_hz, band);
    r_all.insert(r_all.end(), rb.begin(), rb.end());
    g_all.insert(g_all.end(), gb.begin(), gb.end());
  }
  return cosine_similarity(r_all, g_all);
}

// ---------------------------------------------------------------------------
// Aggregation

struct ReportRow {
  std::string task;
  std::string band;
  std::string metric;
  double value = 0.0;
};

struct SummaryRow {
  std::string task;
  std::string band;
  std::string metric;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
};

// Mean and population std per (task, band, metric), sorted by key.
inline std::vector<SummaryRow> aggregate(const std::vector<ReportRow>& rows) {
  if (rows.empty()) {
    throw config_error("aggregate: no rows");
  }
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : rows) {
    groups[{r.task, r.band, r.metric}].push_back(r.value);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, vals] : groups) {
    const double n = static_cast<double>(vals.size());
    double mean = 0.0;
    for (double v : vals) {
      mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (double v : vals) {
      var += (v - mean) * (v - mean);
    }
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), vals.size(), mean, std::sqrt(var / n)});
  }
  return out;
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "task,band,metric,count,mean,std\n";
  for (const auto& r : rows) {
    out << r.task << ',' << r.band << ',' << r.metric << ',' << r.count << ',' << r.mean << ',' << r.std << '\n';
  }
}

inline std::string band_label(Band b) {
  std::ostringstream s;
  s << b.first << ':' << b.second;
  return s.str();
}

}  // namespace lft
