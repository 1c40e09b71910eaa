// Command-line front end for the latent Fourier transform toolkit.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lft/diffusion.hpp"
#include "lft/freq_mask.hpp"
#include "lft/latent_dft.hpp"
#include "lft/metrics.hpp"
#include "lft/net.hpp"
#include "lft/synth_data.hpp"
#include "lft/tasks.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lft;

namespace {

// ---------------------------------------------------------------------------
// Hashing and run manifests

std::uint64_t fnv1a(std::uint64_t h, const char* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

std::uint64_t hash_file(const fs::path& p, std::uint64_t h = kFnvBasis) {
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    throw io_error("cannot read " + p.string());
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(h, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h;
}

// Files in a directory are hashed in sorted order together with their names.
std::string hash_path(const fs::path& p) {
  std::uint64_t h = kFnvBasis;
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() != "run_manifest.json") {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string rel = fs::relative(f, p).generic_string();
      h = fnv1a(h, rel.data(), rel.size());
      h = hash_file(f, h);
    }
  } else {
    h = hash_file(p, h);
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  std::optional<fs::path> checkpoint;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;

  void write(const fs::path& where, double wall_seconds) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    if (checkpoint) {
      j["checkpoint"] = {{"path", checkpoint->string()}, {"hash", hash_path(*checkpoint)}};
    }
    j["inputs"] = json::array();
    for (const auto& p : inputs) {
      j["inputs"].push_back({{"path", p.string()}, {"hash", hash_path(p)}});
    }
    j["outputs"] = json::array();
    for (const auto& p : outputs) {
      j["outputs"].push_back(p.string());
    }
    j["wall_time_s"] = wall_seconds;
    std::ofstream(where) << j.dump(2) << '\n';
  }
};

// Where the manifest goes: inside an output directory, or beside an output file.
fs::path manifest_path_for(const fs::path& out) {
  if (fs::is_directory(out)) {
    return out / "run_manifest.json";
  }
  return fs::path(out.string() + ".manifest.json");
}

// ---------------------------------------------------------------------------
// Parsing helpers

json load_json_file(const std::string& path) {
  if (path.empty()) {
    return json::object();
  }
  std::ifstream in(path);
  if (!in) {
    throw io_error("cannot read config " + path);
  }
  return json::parse(in);
}

json section(const json& j, const char* key) { return j.contains(key) ? j.at(key) : json::object(); }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) {
      out.push_back(cur);
    }
  }
  return out;
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) {
    throw config_error("not a number: '" + s + "'");
  }
  return v;
}

// "all" | "none" | "lo:hi[,lo:hi...]" | "@mask.json"
FrequencyMask parse_mask(const std::string& spec, const SpectrumMeta& meta) {
  if (spec == "all") {
    return FrequencyMask::all(meta.bins());
  }
  if (spec == "none") {
    return FrequencyMask::none(meta.bins());
  }
  if (!spec.empty() && spec[0] == '@') {
    return mask_from_json(load_json_file(spec.substr(1)), meta);
  }
  std::vector<Band> bands;
  for (const auto& part : split(spec, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) {
      throw config_error("band '" + part + "' is not of the form lo:hi");
    }
    bands.emplace_back(parse_number(part.substr(0, colon)), parse_number(part.substr(colon + 1)));
  }
  return user_mask(bands, meta);
}

// "3,5,9-12"
FrequencyMask parse_bins(const std::string& spec, const SpectrumMeta& meta) {
  std::vector<std::size_t> bins;
  for (const auto& part : split(spec, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      bins.push_back(std::stoul(part));
    } else {
      const std::size_t lo = std::stoul(part.substr(0, dash)), hi = std::stoul(part.substr(dash + 1));
      for (std::size_t k = lo; k <= hi; ++k) {
        bins.push_back(k);
      }
    }
  }
  return bins_mask(bins, meta.bins());
}

FrequencyMask resolve_mask(const std::string& bands, const std::string& bins, const SpectrumMeta& meta) {
  if (!bins.empty()) {
    if (!bands.empty()) {
      throw config_error("give either bands or bins, not both");
    }
    return parse_bins(bins, meta);
  }
  return parse_mask(bands.empty() ? "all" : bands, meta);
}

// A clip file holds [C x T], or [N x C x T] with --index selecting one.
Tensor load_clip(const fs::path& path, std::size_t index) {
  Tensor t = load_tensor(fs::is_directory(path) ? path / "signals.lft" : path);
  if (t.rank() == 2) {
    return t;
  }
  if (t.rank() != 3) {
    throw dimension_error("clip file " + path.string() + " must be C x T or N x C x T");
  }
  if (index >= t.dim(0)) {
    throw index_error("clip index " + std::to_string(index) + " out of range");
  }
  const std::size_t C = t.dim(1), T = t.dim(2);
  std::vector<double> v(t.data().begin() + static_cast<std::ptrdiff_t>(index * C * T),
                        t.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * C * T));
  return Tensor(Shape{C, T}, std::move(v));
}

void write_outputs(const fs::path& dir, const std::string& stem, const std::vector<Tensor>& clips,
                   RunManifest& manifest) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const fs::path p = dir / (stem + "_" + std::to_string(i) + ".lft");
    save_tensor(p, clips[i]);
    manifest.outputs.push_back(p);
  }
}

// ---------------------------------------------------------------------------
// Shared option groups

struct Common {
  std::string config;
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file (overridden by flags)")->check(CLI::ExistingFile);
  cmd->add_option("--threads", c.threads, "Worker threads; 1 gives bit-reproducible runs")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Random seed");
}

struct SamplerFlags {
  std::optional<std::size_t> steps;
  std::optional<std::size_t> variations;
  std::optional<double> sigma_min, sigma_max, rho;
  bool euler = false;
};

void add_sampler(CLI::App* cmd, SamplerFlags& s) {
  cmd->add_option("--steps", s.steps, "Sampler steps N (default 32)");
  cmd->add_option("--variations", s.variations, "Number of outputs (default 1)");
  cmd->add_option("--sigma-min", s.sigma_min, "Smallest nonzero noise level (default 0.002)");
  cmd->add_option("--sigma-max", s.sigma_max, "Initial noise level (default 80)");
  cmd->add_option("--rho", s.rho, "Schedule exponent (default 7)");
  cmd->add_flag("--euler", s.euler, "Disable the Heun correction");
}

SamplerConfig build_sampler(const Common& c, const SamplerFlags& f) {
  SamplerConfig s = sampler_config_from_json(section(load_json_file(c.config), "sampler"));
  if (f.steps) s.steps = *f.steps;
  if (f.variations) s.n_variations = *f.variations;
  if (f.sigma_min) s.sigma_min = *f.sigma_min;
  if (f.sigma_max) s.sigma_max = *f.sigma_max;
  if (f.rho) s.rho = *f.rho;
  if (f.euler) s.heun = false;
  if (c.seed) s.seed = *c.seed;
  s.threads = c.threads;
  return s;
}

struct TaskIo {
  std::string checkpoint;
  std::string out;
};

void add_task_io(CLI::App* cmd, TaskIo& io) {
  cmd->add_option("--checkpoint", io.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--out", io.out, "Output directory")->required();
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthArgs {
  Common common;
  std::size_t count = 4096;
  std::string out;
};

int run_synth(const SynthArgs& a, RunManifest& m) {
  const json cfg_json = load_json_file(a.common.config);
  const SynthConfig cfg = synth_config_from_json(section(cfg_json, "synth"));
  const std::uint64_t seed = a.common.seed.value_or(0);
  const Dataset ds = make_dataset(a.count, seed, cfg, a.common.threads);
  save_dataset(a.out, ds);
  m.config = {{"synth", to_json(cfg)}, {"count", a.count}};
  m.seed = seed;
  m.outputs = {fs::path(a.out)};
  std::cerr << "wrote " << a.count << " clips to " << a.out << " (raw mean " << ds.raw_stats.mean << ", std "
            << ds.raw_stats.std << ")\n";
  return 0;
}

struct TrainArgs {
  Common common;
  std::string data, out;
  std::optional<std::size_t> steps, batch, warmup, decay, checkpoint_every;
  std::optional<double> lr;
  std::optional<std::size_t> encoder_hidden, encoder_layers, decoder_hidden, decoder_blocks, latent_channels;
  bool no_masking = false, no_correlation = false, no_log_scale = false;
  std::size_t log_every = 50;
};

int run_train(const TrainArgs& a, RunManifest& m) {
  const json cfg_json = load_json_file(a.common.config);
  TrainConfig tc = train_config_from_json(section(cfg_json, "train"));
  if (a.steps) tc.total_steps = *a.steps;
  if (a.batch) tc.batch_size = *a.batch;
  if (a.warmup) tc.warmup_steps = *a.warmup;
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.decay) tc.decay_steps = *a.decay;
  tc.decay_steps = std::min(tc.decay_steps, tc.total_steps);
  if (a.no_masking) tc.no_masking = true;
  if (a.no_correlation) tc.no_correlation = true;
  if (a.no_log_scale) tc.no_log_scale = true;
  if (a.common.seed) tc.seed = *a.common.seed;
  tc.threads = a.common.threads;

  const Dataset ds = load_dataset(a.data);
  if (ds.signals.empty()) {
    throw config_error("dataset is empty");
  }
  ModelConfig mc;
  if (cfg_json.contains("model")) {
    mc = model_config_from_json(cfg_json.at("model"));
  }
  mc.channels = ds.signals[0].rows();
  mc.frames = ds.signals[0].cols();
  mc.frame_rate_hz = ds.config.frame_rate_hz;
  if (a.encoder_hidden) mc.encoder_hidden = *a.encoder_hidden;
  if (a.encoder_layers) mc.encoder_layers = *a.encoder_layers;
  if (a.decoder_hidden) mc.decoder_hidden = *a.decoder_hidden;
  if (a.decoder_blocks) mc.decoder_blocks = *a.decoder_blocks;
  if (a.latent_channels) mc.latent_channels = *a.latent_channels;

  const double sigma_data = dataset_stats(ds.signals).std;
  Trainer trainer(init_model(mc, sigma_data, tc.seed), tc);
  const std::size_t every = a.checkpoint_every.value_or(0);

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "train_log.csv");
  write_log_header(log);
  const json extra = {{"train", to_json(tc)}, {"dataset_hash", hash_path(a.data)}};
  double running = 0.0;
  for (std::size_t s = 0; s < tc.total_steps; ++s) {
    const StepReport r = trainer.step_on(ds.signals);
    write_log_row(log, r);
    running += r.loss;
    if ((s + 1) % a.log_every == 0) {
      std::cerr << "step " << s + 1 << "/" << tc.total_steps << " loss " << running / double(a.log_every) << '\n';
      running = 0.0;
    }
    if (every > 0 && (s + 1) % every == 0 && s + 1 < tc.total_steps) {
      std::ostringstream name;
      name << "step_" << std::setw(7) << std::setfill('0') << s + 1;
      save_checkpoint(fs::path(a.out) / name.str(), trainer.ema(), s + 1, extra);
    }
  }
  log.close();
  save_checkpoint(a.out, trainer.ema(), tc.total_steps, extra);
  m.config = {{"model", to_json(mc)}, {"train", to_json(tc)}, {"sigma_data", sigma_data}};
  m.seed = tc.seed;
  m.inputs = {fs::path(a.data)};
  m.outputs = {fs::path(a.out)};
  return 0;
}

struct EncodeArgs {
  Common common;
  TaskIo io;
  std::string input;
  std::size_t index = 0;
};

int run_encode(const EncodeArgs& a, RunManifest& m) {
  const Model model = load_checkpoint(a.io.checkpoint);
  const Tensor clip = load_clip(a.input, a.index);
  const LatentSequence z = encode(clip, model);
  fs::create_directories(a.io.out);
  const fs::path out = fs::path(a.io.out) / "latent.lft";
  save_tensor(out, z.values);
  std::ofstream(fs::path(a.io.out) / "latent.json") << json{{"frame_rate_hz", z.frame_rate_hz}}.dump(2) << '\n';
  m.config = {{"index", a.index}};
  m.checkpoint = fs::path(a.io.checkpoint);
  m.inputs = {fs::path(a.input)};
  m.outputs = {out};
  return 0;
}

struct SpectrumArgs {
  Common common;
  std::string input, out;
  std::size_t pad = 2;
  double frame_rate = 64.0;
};

int run_spectrum(const SpectrumArgs& a, RunManifest& m) {
  const Tensor z = load_tensor(a.input);
  if (z.rank() != 2) {
    throw dimension_error("latent file must be C' x T'");
  }
  const LatentSpectrum spec = analyze({z, a.frame_rate}, a.pad);
  save_spectrum(a.out, spec);
  m.config = {{"pad_factor", a.pad}, {"frame_rate_hz", a.frame_rate}};
  m.inputs = {fs::path(a.input)};
  m.outputs = {fs::path(a.out + ".lft"), fs::path(a.out + ".json")};
  return 0;
}

struct PreviewArgs {
  Common common;
  std::string bands, bins, out;
  std::size_t frames = 256, pad = 2;
  double frame_rate = 64.0;
  bool training = false;
};

int run_preview(const PreviewArgs& a, RunManifest& m) {
  const SpectrumMeta meta{a.frames, a.pad, a.frame_rate};
  validate(meta);
  FrequencyMask mask;
  if (a.training) {
    const json cfg_json = load_json_file(a.common.config);
    const TrainConfig tc = train_config_from_json(section(cfg_json, "train"));
    Rng rng = make_rng(a.common.seed.value_or(0), 0);
    mask = sample_training_mask(build_kernel(meta, effective_kernel_options(tc)), rng,
                                MaskSampling{tc.clamp_threshold});
  } else {
    mask = resolve_mask(a.bands, a.bins, meta);
  }
  std::ostringstream csv;
  csv << "bin,freq_hz,keep\n" << std::setprecision(10);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    csv << k << ',' << bin_frequency(k, meta) << ',' << int(mask.keep[k]) << '\n';
  }
  m.config = {{"meta", to_json(meta)}, {"bands", a.bands}, {"bins", a.bins}, {"training", a.training}};
  m.seed = a.common.seed.value_or(0);
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream(a.out) << csv.str();
    m.outputs = {fs::path(a.out)};
  }
  return 0;
}

struct GenerateArgs {
  Common common;
  SamplerFlags sampler;
  TaskIo io;
  std::string input, mask, bins;
  std::size_t index = 0;
};

int run_generate(const GenerateArgs& a, RunManifest& m) {
  const Model model = load_checkpoint(a.io.checkpoint);
  const SamplerConfig sc = build_sampler(a.common, a.sampler);
  const FrequencyMask mask = resolve_mask(a.mask, a.bins, model.config.spectrum_meta());
  const auto outs = conditional_generate(load_clip(a.input, a.index), mask, model, sc);
  write_outputs(a.io.out, "generated", outs, m);
  m.config = {{"sampler", to_json(sc)}, {"mask", mask_to_json(mask)}, {"index", a.index}};
  m.seed = sc.seed;
  m.checkpoint = fs::path(a.io.checkpoint);
  m.inputs = {fs::path(a.input)};
  return 0;
}

struct BlendArgs {
  Common common;
  SamplerFlags sampler;
  TaskIo io;
  std::string input_a, input_b, bands_a, bands_b, bins_a, bins_b;
  std::size_t index_a = 0, index_b = 0;
  double alpha = 0.5, beta = 0.5;
};

int run_blend(const BlendArgs& a, RunManifest& m) {
  const Model model = load_checkpoint(a.io.checkpoint);
  const SamplerConfig sc = build_sampler(a.common, a.sampler);
  const auto meta = model.config.spectrum_meta();
  const FrequencyMask ma = resolve_mask(a.bands_a, a.bins_a, meta);
  const FrequencyMask mb = resolve_mask(a.bands_b, a.bins_b, meta);
  const auto outs = blend(load_clip(a.input_a, a.index_a), load_clip(a.input_b, a.index_b), ma, mb, a.alpha, a.beta,
                          model, sc);
  write_outputs(a.io.out, "blended", outs, m);
  m.config = {{"sampler", to_json(sc)}, {"mask_a", mask_to_json(ma)}, {"mask_b", mask_to_json(mb)},
              {"alpha", a.alpha},       {"beta", a.beta},             {"index_a", a.index_a},
              {"index_b", a.index_b}};
  m.seed = sc.seed;
  m.checkpoint = fs::path(a.io.checkpoint);
  m.inputs = {fs::path(a.input_a), fs::path(a.input_b)};
  return 0;
}

struct IsolateArgs {
  Common common;
  SamplerFlags sampler;
  TaskIo io;
  std::string input, bands, bins;
  std::size_t index = 0;
  double alpha = 0.5, beta = 0.5;
};

int run_isolate(const IsolateArgs& a, RunManifest& m) {
  const Model model = load_checkpoint(a.io.checkpoint);
  const SamplerConfig sc = build_sampler(a.common, a.sampler);
  const FrequencyMask band = resolve_mask(a.bands, a.bins, model.config.spectrum_meta());
  const auto outs = isolate(load_clip(a.input, a.index), band, a.alpha, a.beta, model, sc);
  write_outputs(a.io.out, "isolated", outs, m);
  m.config = {{"sampler", to_json(sc)}, {"band", mask_to_json(band)}, {"alpha", a.alpha}, {"beta", a.beta},
              {"index", a.index}};
  m.seed = sc.seed;
  m.checkpoint = fs::path(a.io.checkpoint);
  m.inputs = {fs::path(a.input)};
  return 0;
}

struct SweepArgs {
  Common common;
  SamplerFlags sampler;
  TaskIo io;
  std::string dataset, input, patterns;
  std::size_t index = 0;
  std::size_t window = 10, stride = 10;
  double smoothing = 1.0;
};

int run_sweep(const SweepArgs& a, RunManifest& m) {
  const Model model = load_checkpoint(a.io.checkpoint);
  SweepConfig cfg{a.window, a.stride, a.smoothing, build_sampler(a.common, a.sampler)};
  Tensor clip;
  std::vector<PatternRecord> patterns;
  if (!a.dataset.empty()) {
    const Dataset ds = load_dataset(a.dataset);
    if (a.index >= ds.signals.size()) {
      throw index_error("clip index out of range");
    }
    clip = ds.signals[a.index];
    patterns = ds.patterns[a.index];
    m.inputs = {fs::path(a.dataset)};
  } else {
    if (a.input.empty() || a.patterns.empty()) {
      throw config_error("sweep needs --dataset, or --input together with --patterns");
    }
    clip = load_clip(a.input, a.index);
    for (const auto& p : load_json_file(a.patterns)) {
      patterns.push_back(pattern_from_json(p));
    }
    m.inputs = {fs::path(a.input), fs::path(a.patterns)};
  }
  const SweepResult res = sweep(clip, patterns, model, cfg);
  fs::create_directories(a.io.out);
  const fs::path out = fs::path(a.io.out) / "sweep.csv";
  std::ofstream csv(out);
  csv << std::setprecision(10);
  write_sweep_csv(csv, res);
  m.config = {{"sampler", to_json(cfg.sampler)},
              {"window_bins", a.window},
              {"stride", a.stride},
              {"smoothing_std", a.smoothing},
              {"index", a.index}};
  m.seed = cfg.sampler.seed;
  m.checkpoint = fs::path(a.io.checkpoint);
  m.outputs = {out};
  return 0;
}

struct MetricsArgs {
  Common common;
  std::string manifest, out;
  double frame_rate = 64.0;
};

// Manifest CSV header: task,reference,ref_index,generation,lo_hz,hi_hz
int run_metrics(const MetricsArgs& a, RunManifest& m) {
  std::ifstream in(a.manifest);
  if (!in) {
    throw io_error("cannot read " + a.manifest);
  }
  std::string line;
  std::getline(in, line);
  if (line.rfind("task,reference,ref_index,generation,lo_hz,hi_hz", 0) != 0) {
    throw config_error("metrics manifest must start with header task,reference,ref_index,generation,lo_hz,hi_hz");
  }
  std::vector<ReportRow> rows;
  std::ostringstream per_row;
  per_row << "task,reference,ref_index,generation,band,metric,value\n" << std::setprecision(10);
  const fs::path base = fs::path(a.manifest).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::size_t undefined = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 6) {
      throw config_error("metrics manifest row needs 6 fields: " + line);
    }
    const Tensor ref = load_clip(resolve(f[1]), std::stoul(f[2]));
    const Tensor gen = load_clip(resolve(f[3]), 0);
    const Band band{parse_number(f[4]), parse_number(f[5])};
    for (auto kind : {DescriptorKind::loudness, DescriptorKind::onset}) {
      const auto v = band_adherence(ref, gen, a.frame_rate, band, kind);
      per_row << f[0] << ',' << f[1] << ',' << f[2] << ',' << f[3] << ',' << band_label(band) << ','
              << to_string(kind) << ',';
      if (v) {
        per_row << *v << '\n';
        rows.push_back({f[0], band_label(band), to_string(kind), *v});
      } else {
        per_row << "undefined\n";
        ++undefined;
      }
    }
  }
  fs::create_directories(a.out);
  std::ofstream(fs::path(a.out) / "rows.csv") << per_row.str();
  std::ofstream summary(fs::path(a.out) / "summary.csv");
  summary << std::setprecision(10);
  write_summary_csv(summary, aggregate(rows));
  if (undefined > 0) {
    std::cerr << undefined << " undefined adherence values excluded from the summary\n";
  }
  m.config = {{"frame_rate_hz", a.frame_rate}};
  m.inputs = {fs::path(a.manifest)};
  m.outputs = {fs::path(a.out) / "rows.csv", fs::path(a.out) / "summary.csv"};
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent Fourier transform toolkit: synthetic data, training, and frequency-masked generation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "Generate a synthetic multi-timescale dataset");
  add_common(c_synth, synth.common);
  c_synth->add_option("--count", synth.count, "Number of clips");
  c_synth->add_option("--out", synth.out, "Output dataset directory")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train encoder and denoiser with random frequency masks");
  add_common(c_train, train.common);
  c_train->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_train->add_option("--out", train.out, "Checkpoint directory")->required();
  c_train->add_option("--steps", train.steps, "Optimizer steps");
  c_train->add_option("--batch", train.batch, "Batch size");
  c_train->add_option("--lr", train.lr, "Peak learning rate");
  c_train->add_option("--warmup", train.warmup, "Linear warmup steps");
  c_train->add_option("--decay", train.decay, "Cosine decay over the final N steps");
  c_train->add_option("--checkpoint-every", train.checkpoint_every, "Write an EMA checkpoint every K steps");
  c_train->add_option("--log-every", train.log_every, "Progress line every N steps")->check(CLI::PositiveNumber);
  c_train->add_option("--encoder-hidden", train.encoder_hidden, "Encoder hidden width");
  c_train->add_option("--encoder-layers", train.encoder_layers, "Encoder layers");
  c_train->add_option("--decoder-hidden", train.decoder_hidden, "Denoiser hidden width");
  c_train->add_option("--decoder-blocks", train.decoder_blocks, "Dilated convolution blocks");
  c_train->add_option("--latent-channels", train.latent_channels, "Latent channels C'");
  c_train->add_flag("--no-masking", train.no_masking, "Ablation: train without frequency masks");
  c_train->add_flag("--no-correlation", train.no_correlation, "Ablation: independent per-bin scores");
  c_train->add_flag("--no-log-scale", train.no_log_scale, "Ablation: kernel on a linear frequency axis");

  EncodeArgs enc;
  auto* c_enc = app.add_subcommand("encode", "Encode a clip to its latent sequence");
  add_common(c_enc, enc.common);
  add_task_io(c_enc, enc.io);
  c_enc->add_option("--input", enc.input, "Clip file (C x T or N x C x T) or dataset directory")->required();
  c_enc->add_option("--index", enc.index, "Clip index within a stacked file");

  SpectrumArgs spec;
  auto* c_spec = app.add_subcommand("spectrum", "Latent spectrum of an encoded sequence");
  add_common(c_spec, spec.common);
  c_spec->add_option("--input", spec.input, "Latent file (C' x T')")->required()->check(CLI::ExistingFile);
  c_spec->add_option("--out", spec.out, "Output stem; writes <stem>.lft and <stem>.json")->required();
  c_spec->add_option("--pad", spec.pad, "Zero-padding factor L")->check(CLI::PositiveNumber);
  c_spec->add_option("--frame-rate", spec.frame_rate, "Latent frame rate in Hz");

  PreviewArgs prev;
  auto* c_prev = app.add_subcommand("mask-preview", "Print the bins a mask keeps as CSV (bin,freq_hz,keep)");
  add_common(c_prev, prev.common);
  c_prev->add_option("--bands", prev.bands, "all | none | lo:hi[,lo:hi...] in Hz | @mask.json");
  c_prev->add_option("--bins", prev.bins, "Explicit bin indices, e.g. 0,3,10-20");
  c_prev->add_option("--frames", prev.frames, "Latent frames T'");
  c_prev->add_option("--pad", prev.pad, "Zero-padding factor L")->check(CLI::PositiveNumber);
  c_prev->add_option("--frame-rate", prev.frame_rate, "Latent frame rate in Hz");
  c_prev->add_flag("--training", prev.training, "Draw a random training mask instead");
  c_prev->add_option("--out", prev.out, "CSV file (default: standard output)");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Conditional generation from a masked latent");
  add_common(c_gen, gen.common);
  add_sampler(c_gen, gen.sampler);
  add_task_io(c_gen, gen.io);
  c_gen->add_option("--input", gen.input, "Reference clip file or dataset directory")->required();
  c_gen->add_option("--index", gen.index, "Clip index within a stacked file");
  c_gen->add_option("--mask", gen.mask, "all | none | lo:hi[,lo:hi...] in Hz | @mask.json");
  c_gen->add_option("--bins", gen.bins, "Explicit bin indices instead of --mask");

  BlendArgs bl;
  auto* c_bl = app.add_subcommand("blend", "Blend two references, each through its own mask");
  add_common(c_bl, bl.common);
  add_sampler(c_bl, bl.sampler);
  add_task_io(c_bl, bl.io);
  c_bl->add_option("--input-a", bl.input_a, "First reference")->required();
  c_bl->add_option("--input-b", bl.input_b, "Second reference")->required();
  c_bl->add_option("--index-a", bl.index_a, "Index of the first reference");
  c_bl->add_option("--index-b", bl.index_b, "Index of the second reference");
  c_bl->add_option("--bands-a", bl.bands_a, "Mask for the first reference");
  c_bl->add_option("--bands-b", bl.bands_b, "Mask for the second reference");
  c_bl->add_option("--bins-a", bl.bins_a, "Explicit bins for the first reference");
  c_bl->add_option("--bins-b", bl.bins_b, "Explicit bins for the second reference");
  c_bl->add_option("--alpha", bl.alpha, "Weight of the first reference");
  c_bl->add_option("--beta", bl.beta, "Weight of the second reference");

  IsolateArgs iso;
  auto* c_iso = app.add_subcommand("isolate", "Boost one band by self-blending with its bandpassed latent");
  add_common(c_iso, iso.common);
  add_sampler(c_iso, iso.sampler);
  add_task_io(c_iso, iso.io);
  c_iso->add_option("--input", iso.input, "Reference clip")->required();
  c_iso->add_option("--index", iso.index, "Clip index within a stacked file");
  c_iso->add_option("--bands", iso.bands, "Band to isolate, lo:hi in Hz");
  c_iso->add_option("--bins", iso.bins, "Explicit bins instead of --bands");
  c_iso->add_option("--alpha", iso.alpha, "Weight of the full latent");
  c_iso->add_option("--beta", iso.beta, "Weight of the bandpassed latent");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "Slide a bin window across the spectrum and score pattern preservation");
  add_common(c_sw, sw.common);
  add_sampler(c_sw, sw.sampler);
  add_task_io(c_sw, sw.io);
  c_sw->add_option("--dataset", sw.dataset, "Dataset directory (clip and ground-truth patterns)");
  c_sw->add_option("--input", sw.input, "Clip file, used with --patterns");
  c_sw->add_option("--patterns", sw.patterns, "JSON array of pattern records");
  c_sw->add_option("--index", sw.index, "Clip index");
  c_sw->add_option("--window", sw.window, "Window width in bins")->check(CLI::PositiveNumber);
  c_sw->add_option("--stride", sw.stride, "Window stride in bins")->check(CLI::PositiveNumber);
  c_sw->add_option("--smoothing", sw.smoothing, "Gaussian smoothing std in windows (0 disables)");

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "Bandpassed descriptor adherence over a manifest of triples");
  add_common(c_met, met.common);
  c_met->add_option("--manifest", met.manifest, "CSV: task,reference,ref_index,generation,lo_hz,hi_hz")
      ->required()
      ->check(CLI::ExistingFile);
  c_met->add_option("--out", met.out, "Output directory for rows.csv and summary.csv")->required();
  c_met->add_option("--frame-rate", met.frame_rate, "Clip frame rate in Hz");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) {
      target = sub;
    }
    std::cerr << target->help();
    return 1;
  }

  RunManifest manifest;
  manifest.argv.assign(argv, argv + argc);
  const auto start = std::chrono::steady_clock::now();
  try {
    CLI::App* cmd = app.get_subcommands().front();
    manifest.command = cmd->get_name();
    fs::path out_for_manifest;
    if (cmd == c_synth) {
      run_synth(synth, manifest);
      out_for_manifest = synth.out;
    } else if (cmd == c_train) {
      run_train(train, manifest);
      out_for_manifest = train.out;
    } else if (cmd == c_enc) {
      run_encode(enc, manifest);
      out_for_manifest = enc.io.out;
    } else if (cmd == c_spec) {
      run_spectrum(spec, manifest);
      out_for_manifest = spec.out + ".json";
    } else if (cmd == c_prev) {
      run_preview(prev, manifest);
      out_for_manifest = prev.out;
    } else if (cmd == c_gen) {
      run_generate(gen, manifest);
      out_for_manifest = gen.io.out;
    } else if (cmd == c_bl) {
      run_blend(bl, manifest);
      out_for_manifest = bl.io.out;
    } else if (cmd == c_iso) {
      run_isolate(iso, manifest);
      out_for_manifest = iso.io.out;
    } else if (cmd == c_sw) {
      run_sweep(sw, manifest);
      out_for_manifest = sw.io.out;
    } else if (cmd == c_met) {
      run_metrics(met, manifest);
      out_for_manifest = met.out;
    }
    if (!out_for_manifest.empty()) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      manifest.write(manifest_path_for(out_for_manifest), wall);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
