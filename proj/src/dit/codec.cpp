#include "foley/dit/codec.hpp"

#include <cmath>

#include "foley/ad/ops.hpp"
#include "foley/ad/optim.hpp"
#include "foley/error.hpp"

namespace foley::dit {

nlohmann::json CodecConfig::to_json() const {
  return {{"stride", stride}, {"hidden_channels", hidden_channels}, {"latent_channels", latent_channels}};
}

CodecConfig CodecConfig::from_json(const nlohmann::json& j) {
  CodecConfig c;
  c.stride = j.value("stride", c.stride);
  c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  return c;
}

LatentCodec::LatentCodec(const CodecConfig& cfg, Rng& rng)
    : cfg_(cfg),
      enc1_(1, cfg.hidden_channels, cfg.stride, rng, cfg.stride),
      enc2_(cfg.hidden_channels, cfg.latent_channels, cfg.stride, rng, cfg.stride),
      dec1_(cfg.latent_channels, cfg.hidden_channels, cfg.stride, rng, cfg.stride),
      dec2_(cfg.hidden_channels, 1, cfg.stride, rng, cfg.stride) {}

ad::Tensor LatentCodec::encode_batch(const ad::Tensor& x) const { return enc2_.forward(enc1_.forward(x)); }

ad::Tensor LatentCodec::decode_batch(const ad::Tensor& z) const { return dec2_.forward(dec1_.forward(z)); }

std::size_t LatentCodec::latent_frames(std::size_t samples) const {
  const std::size_t f = cfg_.downsample_factor();
  return (samples + f - 1) / f;
}

ad::Tensor LatentCodec::encode(std::span<const double> samples) const {
  if (samples.empty()) throw InvalidInput("cannot encode an empty waveform");
  const std::size_t frames = latent_frames(samples.size());
  std::vector<double> padded(frames * cfg_.downsample_factor(), 0.0);
  std::copy(samples.begin(), samples.end(), padded.begin());
  ad::NoGradGuard guard;
  const std::size_t len = padded.size();
  const ad::Tensor x = ad::Tensor::from_data({1, 1, len}, std::move(padded));
  const ad::Tensor z = encode_batch(x);  // [1, C, frames]
  return ad::scale(ad::transpose(ad::reshape(z, {cfg_.latent_channels, frames}), 0, 1), 1.0 / latent_scale);
}

ad::Tensor LatentCodec::encode(const dsp::Waveform& w) const {
  if (w.empty()) throw InvalidInput("cannot encode an empty waveform");
  return encode(dsp::downmix(w).channels[0]);
}

dsp::Waveform LatentCodec::decode(const ad::Tensor& latent, std::size_t num_samples, std::size_t sample_rate) const {
  if (latent.rank() != 2 || latent.dim(1) != cfg_.latent_channels)
    throw ShapeError("decode expects [frames, " + std::to_string(cfg_.latent_channels) + "], got " +
                     ad::shape_str(latent.shape()));
  const std::size_t frames = latent.dim(0);
  if (num_samples > frames * cfg_.downsample_factor()) throw InvalidInput("requested more samples than latent covers");
  ad::NoGradGuard guard;
  const ad::Tensor z =
      ad::reshape(ad::transpose(ad::scale(latent, latent_scale), 0, 1), {1, cfg_.latent_channels, frames});
  const ad::Tensor y = decode_batch(z);
  std::vector<double> samples(y.data().begin(), y.data().begin() + static_cast<std::ptrdiff_t>(num_samples));
  return dsp::Waveform::mono(sample_rate, std::move(samples));
}

void LatentCodec::visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix) {
  enc1_.visit_parameters(fn, prefix + "enc1.");
  enc2_.visit_parameters(fn, prefix + "enc2.");
  dec1_.visit_parameters(fn, prefix + "dec1.");
  dec2_.visit_parameters(fn, prefix + "dec2.");
}

CodecTrainReport train_codec(LatentCodec& codec, const std::vector<dsp::Waveform>& clips,
                             const CodecTrainConfig& cfg) {
  if (clips.empty()) throw InvalidInput("codec training needs at least one clip");
  const std::size_t factor = codec.config().downsample_factor();
  const std::size_t crop = std::max<std::size_t>(factor, cfg.crop / factor * factor);
  std::vector<std::vector<double>> mono;
  for (const auto& c : clips) {
    auto m = dsp::downmix(c).channels[0];
    if (m.size() < crop) m.resize(crop, 0.0);
    mono.push_back(std::move(m));
  }

  Rng rng(cfg.seed);
  ad::AdamConfig acfg;
  acfg.lr = cfg.lr;
  ad::Adam opt(codec.parameters(), acfg);
  CodecTrainReport report;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<double> batch;
    batch.reserve(cfg.batch * crop);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto& clip = mono[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(mono.size()) - 1))];
      const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(clip.size() - crop)));
      batch.insert(batch.end(), clip.begin() + static_cast<std::ptrdiff_t>(start),
                   clip.begin() + static_cast<std::ptrdiff_t>(start + crop));
    }
    const ad::Tensor x = ad::Tensor::from_data({cfg.batch, 1, crop}, std::move(batch));
    opt.zero_grad();
    const ad::Tensor loss = ad::mse_loss(codec.decode_batch(codec.encode_batch(x)), x);
    ad::backward(loss);
    opt.step();
    report.losses.push_back(loss.item());
  }

  // Latent scale over whole clips.
  ad::NoGradGuard guard;
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  codec.latent_scale = 1.0;
  for (const auto& m : mono) {
    const ad::Tensor z = codec.encode(m);
    for (double v : z.data()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(std::max(sq / static_cast<double>(n) - mean * mean, 1e-12));
  codec.latent_scale = sd;
  report.latent_scale = sd;
  return report;
}

double reconstruction_snr_db(std::span<const double> reference, std::span<const double> reconstruction) {
  if (reference.size() != reconstruction.size()) throw InvalidInput("SNR needs equal lengths");
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    sig += reference[i] * reference[i];
    const double d = reference[i] - reconstruction[i];
    err += d * d;
  }
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

}  // namespace foley::dit
