#pragma once

#include <cstddef>
#include <nlohmann/json.hpp>
#include <vector>

#include "foley/ad/nn.hpp"
#include "foley/dsp/envelope.hpp"
#include "foley/rng.hpp"

namespace foley::dit {

struct CodecConfig {
  std::size_t stride = 4;           // per stage; two stages
  std::size_t hidden_channels = 16;
  std::size_t latent_channels = 8;

  std::size_t downsample_factor() const { return stride * stride; }
  nlohmann::json to_json() const;
  static CodecConfig from_json(const nlohmann::json& j);
};

// Two-stage strided 1-D convolutional autoencoder for mono audio.
class LatentCodec : public ad::Module {
 public:
  LatentCodec(const CodecConfig& cfg, Rng& rng);

  const CodecConfig& config() const { return cfg_; }

  // Raw latents for a batch x[B, 1, L] with L a multiple of the factor -> [B, C, L / factor].
  ad::Tensor encode_batch(const ad::Tensor& x) const;
  ad::Tensor decode_batch(const ad::Tensor& z) const;

  // Latent of a mono waveform as [frames, C], frames = ceil(samples / factor),
  // divided by latent_scale.
  ad::Tensor encode(std::span<const double> samples) const;
  ad::Tensor encode(const dsp::Waveform& w) const;
  // Inverse of encode, trimmed to num_samples.
  dsp::Waveform decode(const ad::Tensor& latent, std::size_t num_samples, std::size_t sample_rate) const;

  std::size_t latent_frames(std::size_t samples) const;

  void visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix = "") override;

  double latent_scale = 1.0;

 private:
  CodecConfig cfg_;
  ad::Conv1d enc1_, enc2_;
  ad::ConvTranspose1d dec1_, dec2_;
};

struct CodecTrainConfig {
  std::size_t steps = 1500;
  std::size_t batch = 16;
  std::size_t crop = 1024;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

struct CodecTrainReport {
  std::vector<double> losses;
  double latent_scale = 1.0;
};

// Reconstruction-MSE training on random crops, then sets latent_scale to the
// latent standard deviation over the training clips.
CodecTrainReport train_codec(LatentCodec& codec, const std::vector<dsp::Waveform>& clips,
                             const CodecTrainConfig& cfg);

// 10 log10(signal energy / error energy).
double reconstruction_snr_db(std::span<const double> reference, std::span<const double> reconstruction);

}  // namespace foley::dit
