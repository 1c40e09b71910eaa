#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lft/autodiff.hpp"
#include "lft/error.hpp"
#include "lft/freq_mask.hpp"
#include "lft/latent_dft.hpp"
#include "lft/rng.hpp"
#include "lft/tensor.hpp"

namespace lft {

struct ModelConfig {
  std::size_t channels = 16;         // C
  std::size_t latent_channels = 16;  // C'
  std::size_t frames = 256;          // T = T'
  double frame_rate_hz = 64.0;       // f_r
  std::size_t pad_factor = 2;        // L

  std::size_t encoder_hidden = 128;
  std::size_t encoder_layers = 4;

  std::size_t decoder_hidden = 64;
  std::size_t decoder_blocks = 8;
  std::size_t kernel_size = 3;
  std::size_t embedding_dim = 16;

  SpectrumMeta spectrum_meta() const { return {frames, pad_factor, frame_rate_hz}; }

  // Frames visible to one output frame of the dilated stack (dilation 1, 2, 4, ...).
  std::size_t receptive_field_frames() const {
    std::size_t field = 1;
    for (std::size_t b = 0; b < decoder_blocks; ++b) {
      field += (kernel_size - 1) * (std::size_t{1} << b);
    }
    return field;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.channels == 0 || cfg.latent_channels == 0 || cfg.encoder_hidden == 0 || cfg.decoder_hidden == 0) {
    throw config_error("model widths must be positive");
  }
  if (cfg.encoder_layers < 1 || cfg.decoder_blocks < 1) {
    throw config_error("encoder needs >= 1 layer and decoder >= 1 block");
  }
  if (cfg.kernel_size % 2 == 0) {
    throw config_error("decoder kernel size must be odd");
  }
  if (cfg.embedding_dim == 0 || cfg.embedding_dim % 2 != 0) {
    throw config_error("noise embedding dim must be even and positive");
  }
  validate(cfg.spectrum_meta());
}

// Input/output scaling around the raw network so that it sees unit-variance
// inputs and predicts a unit-variance target at every noise level.
struct Preconditioning {
  double sigma_data = 0.5;

  double c_skip(double sigma) const { return sigma_data * sigma_data / (sigma * sigma + sigma_data * sigma_data); }
  double c_out(double sigma) const { return sigma * sigma_data / std::sqrt(sigma * sigma + sigma_data * sigma_data); }
  double c_in(double sigma) const { return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data); }
  double c_noise(double sigma) const { return 0.25 * std::log(sigma); }
  // lambda(sigma) = 1 / c_out(sigma)^2
  double loss_weight(double sigma) const {
    return (sigma * sigma + sigma_data * sigma_data) / ((sigma * sigma_data) * (sigma * sigma_data));
  }
};

// Frame-wise MLP: each column of the clip is mapped independently.
struct EncoderParams {
  std::vector<Tensor> weights;  // [out x in]
  std::vector<Tensor> biases;   // [out x 1]
};

struct DenoiserParams {
  Tensor in_w, in_b;    // [H x (C + C')], [H x 1]
  Tensor emb_w, emb_b;  // [H x E], [H x 1]
  std::vector<Tensor> scale_w, scale_b, shift_w, shift_b;  // [H x H], [H x 1]
  std::vector<Tensor> cond_w;          // [H x C']
  std::vector<Tensor> conv_w, conv_b;  // [K x H x H], [H x 1]
  std::vector<Tensor> mix_w, mix_b;    // [H x H], [H x 1]
  Tensor out_w, out_b;  // [C x H], [C x 1]; zero at init
};

struct Model {
  ModelConfig config;
  Preconditioning precond;
  EncoderParams encoder;
  DenoiserParams denoiser;

  // Stable order; names double as checkpoint file stems.
  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    for (std::size_t i = 0; i < encoder.weights.size(); ++i) {
      fn("enc" + std::to_string(i) + "_w", encoder.weights[i]);
      fn("enc" + std::to_string(i) + "_b", encoder.biases[i]);
    }
    fn(std::string("dec_in_w"), denoiser.in_w);
    fn(std::string("dec_in_b"), denoiser.in_b);
    fn(std::string("dec_emb_w"), denoiser.emb_w);
    fn(std::string("dec_emb_b"), denoiser.emb_b);
    for (std::size_t i = 0; i < denoiser.conv_w.size(); ++i) {
      const std::string p = "dec_block" + std::to_string(i);
      fn(p + "_scale_w", denoiser.scale_w[i]);
      fn(p + "_scale_b", denoiser.scale_b[i]);
      fn(p + "_shift_w", denoiser.shift_w[i]);
      fn(p + "_shift_b", denoiser.shift_b[i]);
      fn(p + "_cond_w", denoiser.cond_w[i]);
      fn(p + "_conv_w", denoiser.conv_w[i]);
      fn(p + "_conv_b", denoiser.conv_b[i]);
      fn(p + "_mix_w", denoiser.mix_w[i]);
      fn(p + "_mix_b", denoiser.mix_b[i]);
    }
    fn(std::string("dec_out_w"), denoiser.out_w);
    fn(std::string("dec_out_b"), denoiser.out_b);
  }
  template <class Fn>
  void for_each_parameter(Fn&& fn) const {
    const_cast<Model*>(this)->for_each_parameter(
        [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for_each_parameter([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }
};

namespace detail {

inline Tensor uniform_fan_in(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) {
    v = dist(rng);
  }
  return t;
}

}  // namespace detail

// He-style uniform fan-in init; the decoder's output layer starts at zero so
// the untrained denoiser returns c_skip * x_tau.
inline Model init_model(const ModelConfig& cfg, double sigma_data, std::uint64_t seed) {
  validate(cfg);
  if (!(sigma_data > 0.0)) {
    throw config_error("sigma_data must be > 0");
  }
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  Model m{cfg, Preconditioning{sigma_data}, {}, {}};

  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    const std::size_t in = l == 0 ? cfg.channels : cfg.encoder_hidden;
    const std::size_t out = l + 1 == cfg.encoder_layers ? cfg.latent_channels : cfg.encoder_hidden;
    m.encoder.weights.push_back(detail::uniform_fan_in({out, in}, in, 1.0, rng));
    m.encoder.biases.emplace_back(Shape{out, 1});
  }

  const std::size_t H = cfg.decoder_hidden;
  const std::size_t K = cfg.kernel_size;
  auto& d = m.denoiser;
  d.in_w = detail::uniform_fan_in({H, cfg.channels + cfg.latent_channels}, cfg.channels + cfg.latent_channels, 1.0, rng);
  d.in_b = Tensor(Shape{H, 1});
  d.emb_w = detail::uniform_fan_in({H, cfg.embedding_dim}, cfg.embedding_dim, 1.0, rng);
  d.emb_b = Tensor(Shape{H, 1});
  // Residual branches are scaled down so the stack starts near identity.
  const double mix_gain = 1.0 / std::sqrt(static_cast<double>(cfg.decoder_blocks));
  for (std::size_t b = 0; b < cfg.decoder_blocks; ++b) {
    d.scale_w.emplace_back(Shape{H, H});
    d.scale_b.push_back(Tensor::matrix(H, 1, 1.0));
    d.shift_w.push_back(detail::uniform_fan_in({H, H}, H, 1.0, rng));
    d.shift_b.emplace_back(Shape{H, 1});
    d.cond_w.push_back(detail::uniform_fan_in({H, cfg.latent_channels}, cfg.latent_channels, 1.0, rng));
    d.conv_w.push_back(detail::uniform_fan_in({K, H, H}, K * H, 1.0, rng));
    d.conv_b.emplace_back(Shape{H, 1});
    d.mix_w.push_back(detail::uniform_fan_in({H, H}, H, mix_gain, rng));
    d.mix_b.emplace_back(Shape{H, 1});
  }
  d.out_w = Tensor(Shape{cfg.channels, H});
  d.out_b = Tensor(Shape{cfg.channels, 1});
  return m;
}

// Model parameters bound to one tape.
struct ModelVars {
  std::vector<Var> enc_w, enc_b;
  Var in_w, in_b, emb_w, emb_b;
  std::vector<Var> scale_w, scale_b, shift_w, shift_b, cond_w;
  std::vector<Var> conv_w, conv_b, mix_w, mix_b;
  Var out_w, out_b;
};

// trainable=false binds by const reference (no gradients, no copies).
inline ModelVars bind(Tape& tape, Model& m, bool trainable) {
  auto b = [&](Tensor& t) { return trainable ? tape.parameter(t) : tape.constant_ref(t); };
  ModelVars v;
  for (std::size_t i = 0; i < m.encoder.weights.size(); ++i) {
    v.enc_w.push_back(b(m.encoder.weights[i]));
    v.enc_b.push_back(b(m.encoder.biases[i]));
  }
  auto& d = m.denoiser;
  v.in_w = b(d.in_w);
  v.in_b = b(d.in_b);
  v.emb_w = b(d.emb_w);
  v.emb_b = b(d.emb_b);
  for (std::size_t i = 0; i < d.conv_w.size(); ++i) {
    v.scale_w.push_back(b(d.scale_w[i]));
    v.scale_b.push_back(b(d.scale_b[i]));
    v.shift_w.push_back(b(d.shift_w[i]));
    v.shift_b.push_back(b(d.shift_b[i]));
    v.cond_w.push_back(b(d.cond_w[i]));
    v.conv_w.push_back(b(d.conv_w[i]));
    v.conv_b.push_back(b(d.conv_b[i]));
    v.mix_w.push_back(b(d.mix_w[i]));
    v.mix_b.push_back(b(d.mix_b[i]));
  }
  v.out_w = b(d.out_w);
  v.out_b = b(d.out_b);
  return v;
}

inline ModelVars bind_const(Tape& tape, const Model& m) { return bind(tape, const_cast<Model&>(m), false); }

// x: [C x T] -> z: [C' x T]
inline Var encode_on_tape(Tape& tape, const ModelVars& v, Var x) {
  Var h = x;
  for (std::size_t l = 0; l < v.enc_w.size(); ++l) {
    h = add(tape, matmul(tape, v.enc_w[l], h), v.enc_b[l]);
    if (l + 1 < v.enc_w.size()) {
      h = silu(tape, h);
    }
  }
  return h;
}

// Sinusoidal features of c_noise at geometrically spaced angular rates 0.5..16.
inline Tensor noise_features(double c_noise, std::size_t dim) {
  Tensor f(Shape{dim, 1});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double rate = half > 1 ? 0.5 * std::exp(std::log(32.0) * static_cast<double>(i) / static_cast<double>(half - 1)) : 1.0;
    f[i] = std::sin(rate * c_noise);
    f[half + i] = std::cos(rate * c_noise);
  }
  return f;
}

// Raw network F(c_in x_tau ++ z_masked, c_noise): [C x T]. The latent also
// enters every block through its own 1x1 projection.
inline Var denoiser_net_on_tape(Tape& tape, const ModelVars& v, const ModelConfig& cfg, Var net_input, Var z_masked,
                                double c_noise) {
  Var h = add(tape, matmul(tape, v.in_w, net_input), v.in_b);
  Var feats = tape.constant(noise_features(c_noise, cfg.embedding_dim));
  Var emb = silu(tape, add(tape, matmul(tape, v.emb_w, feats), v.emb_b));
  for (std::size_t b = 0; b < v.conv_w.size(); ++b) {
    // Noise-level conditioning as a per-channel scale and shift.
    Var gain = add(tape, matmul(tape, v.scale_w[b], emb), v.scale_b[b]);
    Var shift = add(tape, matmul(tape, v.shift_w[b], emb), v.shift_b[b]);
    Var a = silu(tape, add(tape, mul(tape, h, gain), shift));
    a = add(tape, conv1d(tape, a, v.conv_w[b], std::size_t{1} << b), v.conv_b[b]);
    a = silu(tape, add(tape, a, matmul(tape, v.cond_w[b], z_masked)));
    h = add(tape, h, add(tape, matmul(tape, v.mix_w[b], a), v.mix_b[b]));
  }
  return add(tape, matmul(tape, v.out_w, silu(tape, h)), v.out_b);
}

// x0_hat = c_skip x_tau + c_out F(c_in x_tau ++ z_masked, c_noise)
inline Var denoise_on_tape(Tape& tape, const ModelVars& v, const Model& m, Var z_masked, const Tensor& x_tau,
                           double sigma) {
  if (!(sigma > 0.0)) {
    throw domain_error("denoise: sigma must be > 0");
  }
  const Preconditioning& p = m.precond;
  const Tensor& z = tape.value(z_masked);
  if (x_tau.rank() != 2 || x_tau.rows() != m.config.channels || z.rows() != m.config.latent_channels ||
      z.cols() != x_tau.cols()) {
    throw dimension_error("denoise: clip " + shape_string(x_tau.shape()) + " / latent " + shape_string(z.shape()) +
                          " do not match the model");
  }
  Tensor scaled = x_tau;
  for (double& val : scaled.values()) {
    val *= p.c_in(sigma);
  }
  Var input = concat_rows(tape, tape.constant(std::move(scaled)), z_masked);
  Var raw = denoiser_net_on_tape(tape, v, m.config, input, z_masked, p.c_noise(sigma));
  Tensor skip = x_tau;
  for (double& val : skip.values()) {
    val *= p.c_skip(sigma);
  }
  return add(tape, scale(tape, raw, p.c_out(sigma)), tape.constant(std::move(skip)));
}

// ---------------------------------------------------------------------------
// Inference wrappers (no gradient recording)

inline LatentSequence encode(const Tensor& x0, const Model& m) {
  if (x0.rank() != 2 || x0.rows() != m.config.channels) {
    throw dimension_error("encode: clip " + shape_string(x0.shape()) + " does not have " +
                          std::to_string(m.config.channels) + " channels");
  }
  Tape tape(false);
  const ModelVars v = bind_const(tape, m);
  const Var z = encode_on_tape(tape, v, tape.constant_ref(x0));
  return {tape.value(z), m.config.frame_rate_hz};
}

inline Tensor denoise(const LatentSequence& z_masked, const Tensor& x_tau, double sigma, const Model& m) {
  Tape tape(false);
  const ModelVars v = bind_const(tape, m);
  const Var out = denoise_on_tape(tape, v, m, tape.constant_ref(z_masked.values), x_tau, sigma);
  return tape.value(out);
}

// Frequency masking of a latent on the tape. The operator P = trunc * IDFT *
// diag(M) * DFT * pad is symmetric (real even filter), so it is its own adjoint.
inline Var mask_on_tape(Tape& tape, Var z, const FrequencyMask& mask, std::size_t pad_factor, double frame_rate_hz) {
  auto op = [mask, pad_factor, frame_rate_hz](const Tensor& v) {
    return mask_latent(LatentSequence{v, frame_rate_hz}, mask, pad_factor).values;
  };
  return linear_map(tape, z, op, op);
}

// Encode, then keep only the masked latent frequencies.
inline LatentSequence masked_latent(const Tensor& x0, const FrequencyMask& mask, const Model& m) {
  return mask_latent(encode(x0, m), mask, m.config.pad_factor);
}

// ---------------------------------------------------------------------------
// Checkpoint: directory of LFT1 tensors (f32) + manifest.json

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},
          {"latent_channels", c.latent_channels},
          {"frames", c.frames},
          {"frame_rate_hz", c.frame_rate_hz},
          {"pad_factor", c.pad_factor},
          {"encoder_hidden", c.encoder_hidden},
          {"encoder_layers", c.encoder_layers},
          {"decoder_hidden", c.decoder_hidden},
          {"decoder_blocks", c.decoder_blocks},
          {"kernel_size", c.kernel_size},
          {"embedding_dim", c.embedding_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.frames = j.value("frames", c.frames);
  c.frame_rate_hz = j.value("frame_rate_hz", c.frame_rate_hz);
  c.pad_factor = j.value("pad_factor", c.pad_factor);
  c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  validate(c);
  return c;
}

inline void save_checkpoint(const std::filesystem::path& dir, const Model& m, std::size_t step,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  m.for_each_parameter([&](const std::string& name, const Tensor& t) {
    save_tensor(dir / (name + ".lft"), t, Dtype::f32);
  });
  nlohmann::json manifest = {{"architecture", to_json(m.config)},
                             {"sigma_data", m.precond.sigma_data},
                             {"frame_rate_hz", m.config.frame_rate_hz},
                             {"pad_factor", m.config.pad_factor},
                             {"step", step}};
  for (const auto& [k, val] : extra.items()) {
    manifest[k] = val;
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw io_error("no manifest.json in " + dir.string());
  }
  const auto manifest = nlohmann::json::parse(in);
  Model m = init_model(model_config_from_json(manifest.at("architecture")), manifest.at("sigma_data").get<double>(), 0);
  m.for_each_parameter([&](const std::string& name, Tensor& t) {
    Tensor loaded = load_tensor(dir / (name + ".lft"));
    if (loaded.shape() != t.shape()) {
      throw dimension_error("checkpoint tensor " + name + " has shape " + shape_string(loaded.shape()) +
                            ", expected " + shape_string(t.shape()));
    }
    t = std::move(loaded);
  });
  return m;
}

}  // namespace lft
