#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "lft/error.hpp"
#include "lft/parallel.hpp"
#include "lft/rng.hpp"
#include "lft/tensor.hpp"

namespace lft {

enum class PatternKind { envelope, pulse, trill };

inline std::string to_string(PatternKind k) {
  switch (k) {
    case PatternKind::envelope: return "envelope";
    case PatternKind::pulse: return "pulse";
    case PatternKind::trill: return "trill";
  }
  return "?";
}

inline PatternKind pattern_kind_from_string(const std::string& s) {
  if (s == "envelope") return PatternKind::envelope;
  if (s == "pulse") return PatternKind::pulse;
  if (s == "trill") return PatternKind::trill;
  throw config_error("unknown pattern kind '" + s + "'");
}

// Ground truth for one additive pattern. Channels [channel_lo, channel_hi).
struct PatternRecord {
  PatternKind kind = PatternKind::envelope;
  double rate_hz = 1.0;
  std::size_t channel_lo = 0;
  std::size_t channel_hi = 1;
  double amplitude = 1.0;
  double phase = 0.0;

  friend bool operator==(const PatternRecord&, const PatternRecord&) = default;
};

struct ToyClip {
  Tensor signal;  // C x T
  std::vector<PatternRecord> patterns;
  double frame_rate_hz = 64.0;
};

struct SynthConfig {
  std::size_t channels = 16;
  std::size_t frames = 256;
  double frame_rate_hz = 64.0;
  // On-grid rates (multiples of f_r / T) so each pattern sits on a DFT bin.
  std::vector<double> slow_rates{0.25, 0.5};
  std::vector<double> mid_rates{1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  std::vector<double> fast_rates{10.0, 12.0, 14.0, 16.0};
  std::size_t n_slow = 1;  // envelopes
  std::size_t n_mid = 1;   // pulses
  std::size_t n_fast = 1;  // trills or pulses
  double amplitude_min = 0.5;
  double amplitude_max = 1.5;
  double noise_std = 0.05;
};

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"channels", c.channels},   {"frames", c.frames},       {"frame_rate_hz", c.frame_rate_hz},
          {"slow_rates", c.slow_rates}, {"mid_rates", c.mid_rates}, {"fast_rates", c.fast_rates},
          {"n_slow", c.n_slow},       {"n_mid", c.n_mid},         {"n_fast", c.n_fast},
          {"amplitude_min", c.amplitude_min}, {"amplitude_max", c.amplitude_max}, {"noise_std", c.noise_std}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.channels = j.value("channels", c.channels);
  c.frames = j.value("frames", c.frames);
  c.frame_rate_hz = j.value("frame_rate_hz", c.frame_rate_hz);
  c.slow_rates = j.value("slow_rates", c.slow_rates);
  c.mid_rates = j.value("mid_rates", c.mid_rates);
  c.fast_rates = j.value("fast_rates", c.fast_rates);
  c.n_slow = j.value("n_slow", c.n_slow);
  c.n_mid = j.value("n_mid", c.n_mid);
  c.n_fast = j.value("n_fast", c.n_fast);
  c.amplitude_min = j.value("amplitude_min", c.amplitude_min);
  c.amplitude_max = j.value("amplitude_max", c.amplitude_max);
  c.noise_std = j.value("noise_std", c.noise_std);
  return c;
}

inline void validate(const SynthConfig& c) {
  if (c.channels < 2 || c.frames < 2 || !(c.frame_rate_hz > 0.0)) {
    throw config_error("synthetic clips need >= 2 channels, >= 2 frames and a positive frame rate");
  }
  const double nyq = c.frame_rate_hz / 2.0;
  auto check_pool = [&](const std::vector<double>& pool, std::size_t count, double lo, double hi, const char* name) {
    if (count > 0 && pool.empty()) {
      throw config_error(std::string(name) + " rate pool is empty");
    }
    for (double r : pool) {
      if (!(r > 0.0)) {
        throw config_error(std::string(name) + " rates must be positive");
      }
      if (r >= nyq) {
        throw config_error("pattern rate " + std::to_string(r) + " Hz is not below Nyquist " + std::to_string(nyq));
      }
      if (r < lo || r >= hi) {
        throw config_error(std::string(name) + " rate " + std::to_string(r) + " outside its pool range");
      }
    }
  };
  check_pool(c.slow_rates, c.n_slow, 0.0, 1.0, "slow");
  check_pool(c.mid_rates, c.n_mid, 1.0, 8.0 + 1e-12, "mid");
  check_pool(c.fast_rates, c.n_fast, 8.0 + 1e-12, nyq, "fast");
  if (c.amplitude_min < 0.0 || c.amplitude_max < c.amplitude_min || c.noise_std < 0.0) {
    throw config_error("bad amplitude range or noise level");
  }
}

// Time course of a pattern on its first channel (unit amplitude).
//   envelope: (1 + cos(w t + phase)) / 2
//   pulse:    ((1 + cos(w t + phase)) / 2)^3, a bump per period
//   trill:    cos(w t + phase); row lo gets (1 + .) / 2, row lo+1 gets (1 - .) / 2
inline double pattern_wave(const PatternRecord& p, double t_seconds) {
  const double arg = 2.0 * std::numbers::pi * p.rate_hz * t_seconds + p.phase;
  switch (p.kind) {
    case PatternKind::envelope: return 0.5 * (1.0 + std::cos(arg));
    case PatternKind::pulse: {
      const double b = 0.5 * (1.0 + std::cos(arg));
      return b * b * b;
    }
    case PatternKind::trill: return std::cos(arg);
  }
  return 0.0;
}

// The pattern's isolated additive contribution, C x T.
inline Tensor render_pattern(const PatternRecord& p, std::size_t channels, std::size_t frames, double frame_rate_hz) {
  if (p.channel_hi > channels || p.channel_lo >= p.channel_hi) {
    throw config_error("pattern channel span outside the clip");
  }
  Tensor out = Tensor::matrix(channels, frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double w = pattern_wave(p, static_cast<double>(t) / frame_rate_hz);
    for (std::size_t c = p.channel_lo; c < p.channel_hi; ++c) {
      double v = w;
      if (p.kind == PatternKind::trill) {
        v = (c == p.channel_lo) ? 0.5 * (1.0 + w) : 0.5 * (1.0 - w);
      }
      out(c, t) = p.amplitude * v;
    }
  }
  return out;
}

// Sweep-style clips with only a slow and a fast pattern use n_mid = 0.
inline ToyClip generate_clip(Rng& rng, const SynthConfig& cfg) {
  validate(cfg);
  ToyClip clip{Tensor::matrix(cfg.channels, cfg.frames), {}, cfg.frame_rate_hz};
  std::uniform_real_distribution<double> amp(cfg.amplitude_min, cfg.amplitude_max);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  auto pick = [&](const std::vector<double>& pool) {
    std::uniform_int_distribution<std::size_t> idx(0, pool.size() - 1);
    return pool[idx(rng)];
  };
  auto span = [&](std::size_t min_w, std::size_t max_w) {
    max_w = std::min(max_w, cfg.channels);
    min_w = std::min(min_w, max_w);
    std::uniform_int_distribution<std::size_t> width(min_w, max_w);
    const std::size_t w = width(rng);
    std::uniform_int_distribution<std::size_t> start(0, cfg.channels - w);
    const std::size_t lo = start(rng);
    return std::pair{lo, lo + w};
  };
  auto add = [&](PatternKind kind, double rate, std::pair<std::size_t, std::size_t> ch) {
    PatternRecord p{kind, rate, ch.first, ch.second, amp(rng), phase(rng)};
    clip.patterns.push_back(p);
  };

  for (std::size_t i = 0; i < cfg.n_slow; ++i) {
    const double rate = pick(cfg.slow_rates);
    add(PatternKind::envelope, rate, span(3, 6));
  }
  for (std::size_t i = 0; i < cfg.n_mid; ++i) {
    const double rate = pick(cfg.mid_rates);
    add(PatternKind::pulse, rate, span(2, 4));
  }
  for (std::size_t i = 0; i < cfg.n_fast; ++i) {
    const double rate = pick(cfg.fast_rates);
    const bool trill = std::bernoulli_distribution(0.5)(rng);
    add(trill ? PatternKind::trill : PatternKind::pulse, rate, trill ? span(2, 2) : span(2, 4));
  }

  for (const auto& p : clip.patterns) {
    const Tensor part = render_pattern(p, cfg.channels, cfg.frames, cfg.frame_rate_hz);
    for (std::size_t i = 0; i < part.size(); ++i) {
      clip.signal[i] += part[i];
    }
  }
  if (cfg.noise_std > 0.0) {
    for (double& v : clip.signal.values()) {
      v += cfg.noise_std * standard_normal(rng);
    }
  }
  return clip;
}

// Clip i is drawn from the stream (seed, i): independent of thread count.
inline std::vector<ToyClip> generate_dataset(std::size_t count, std::uint64_t seed, const SynthConfig& cfg,
                                             std::size_t threads = 1) {
  validate(cfg);
  std::vector<ToyClip> clips(count);
  parallel_for(count, threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, i);
    clips[i] = generate_clip(rng, cfg);
  });
  return clips;
}

struct DatasetStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

// Streaming (Welford) mean and population std over every element of every clip.
inline DatasetStats dataset_stats(const std::vector<Tensor>& clips) {
  if (clips.empty()) {
    throw config_error("dataset_stats on an empty dataset");
  }
  DatasetStats s;
  double m2 = 0.0;
  for (const auto& c : clips) {
    for (double v : c.data()) {
      ++s.count;
      const double delta = v - s.mean;
      s.mean += delta / static_cast<double>(s.count);
      m2 += delta * (v - s.mean);
    }
  }
  s.std = std::sqrt(m2 / static_cast<double>(s.count));
  return s;
}

// (x - mean) / std; std must be positive.
inline void standardize(std::vector<Tensor>& clips, const DatasetStats& stats) {
  if (!(stats.std > 0.0)) {
    throw config_error("cannot standardize a dataset with zero std");
  }
  for (auto& c : clips) {
    for (double& v : c.values()) {
      v = (v - stats.mean) / stats.std;
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset directory: signals.lft [N x C x T], patterns.jsonl, dataset.json

inline nlohmann::json to_json(const PatternRecord& p) {
  return {{"kind", to_string(p.kind)}, {"rate_hz", p.rate_hz}, {"channel_span", {p.channel_lo, p.channel_hi}},
          {"amplitude", p.amplitude},  {"phase", p.phase}};
}

inline PatternRecord pattern_from_json(const nlohmann::json& j) {
  const auto span = j.at("channel_span");
  return {pattern_kind_from_string(j.at("kind").get<std::string>()), j.at("rate_hz").get<double>(),
          span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>(), j.at("amplitude").get<double>(),
          j.at("phase").get<double>()};
}

struct Dataset {
  std::vector<Tensor> signals;  // standardized
  std::vector<std::vector<PatternRecord>> patterns;
  DatasetStats raw_stats;  // before standardization
  SynthConfig config;
  std::uint64_t seed = 0;
};

inline Dataset make_dataset(std::size_t count, std::uint64_t seed, const SynthConfig& cfg, std::size_t threads = 1) {
  auto clips = generate_dataset(count, seed, cfg, threads);
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  for (auto& c : clips) {
    ds.signals.push_back(std::move(c.signal));
    ds.patterns.push_back(std::move(c.patterns));
  }
  ds.raw_stats = dataset_stats(ds.signals);
  standardize(ds.signals, ds.raw_stats);
  return ds;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  if (ds.signals.empty()) {
    throw config_error("refusing to save an empty dataset");
  }
  const std::size_t C = ds.signals[0].rows(), T = ds.signals[0].cols();
  Tensor stacked(Shape{ds.signals.size(), C, T});
  for (std::size_t i = 0; i < ds.signals.size(); ++i) {
    std::copy(ds.signals[i].data().begin(), ds.signals[i].data().end(),
              stacked.values().begin() + static_cast<std::ptrdiff_t>(i * C * T));
  }
  save_tensor(dir / "signals.lft", stacked);
  std::ofstream jsonl(dir / "patterns.jsonl");
  for (std::size_t i = 0; i < ds.patterns.size(); ++i) {
    nlohmann::json line = {{"clip", i}, {"patterns", nlohmann::json::array()}};
    for (const auto& p : ds.patterns[i]) {
      line["patterns"].push_back(to_json(p));
    }
    jsonl << line.dump() << '\n';
  }
  const nlohmann::json meta = {{"count", ds.signals.size()},
                               {"seed", ds.seed},
                               {"raw_mean", ds.raw_stats.mean},
                               {"raw_std", ds.raw_stats.std},
                               {"config", to_json(ds.config)}};
  std::ofstream(dir / "dataset.json") << meta.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "dataset.json");
  if (!meta_in) {
    throw io_error("no dataset.json in " + dir.string());
  }
  const auto meta = nlohmann::json::parse(meta_in);
  Dataset ds;
  ds.config = synth_config_from_json(meta.at("config"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.raw_stats = {meta.at("raw_mean").get<double>(), meta.at("raw_std").get<double>(), 0};
  const Tensor stacked = load_tensor(dir / "signals.lft");
  if (stacked.rank() != 3) {
    throw dimension_error("signals.lft must be N x C x T");
  }
  const std::size_t N = stacked.dim(0), C = stacked.dim(1), T = stacked.dim(2);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> v(stacked.data().begin() + static_cast<std::ptrdiff_t>(i * C * T),
                          stacked.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * C * T));
    ds.signals.emplace_back(Shape{C, T}, std::move(v));
  }
  std::ifstream jsonl(dir / "patterns.jsonl");
  std::string line;
  while (std::getline(jsonl, line)) {
    if (line.empty()) {
      continue;
    }
    const auto j = nlohmann::json::parse(line);
    std::vector<PatternRecord> ps;
    for (const auto& p : j.at("patterns")) {
      ps.push_back(pattern_from_json(p));
    }
    ds.patterns.push_back(std::move(ps));
  }
  if (ds.patterns.size() != N) {
    throw io_error("patterns.jsonl has " + std::to_string(ds.patterns.size()) + " lines for " + std::to_string(N) +
                   " clips");
  }
  return ds;
}

}  // namespace lft
