#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>

#include "foley/diffusion/diffusion.hpp"
#include "foley/dit/codec.hpp"
#include "foley/dit/dit.hpp"
#include "foley/dit/training.hpp"
#include "foley/dsp/envelope.hpp"

namespace foley::dit {

struct ScheduleConfig {
  std::size_t train_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  diffusion::NoiseSchedule build() const { return diffusion::make_linear_schedule(train_steps, beta_start, beta_end); }
  nlohmann::json to_json() const;
  static ScheduleConfig from_json(const nlohmann::json& j);
};

// Everything needed to generate audio: codec, frozen base, optional branch,
// noise schedule and the semantic class table.
struct FoleyModel {
  std::unique_ptr<LatentCodec> codec;
  std::unique_ptr<DiTModel> base;
  std::unique_ptr<ControlNetBranch> controlnet;
  ScheduleConfig schedule_config;
  diffusion::NoiseSchedule schedule;
  ad::Tensor semantic_table;  // [classes, cross_attn_dim]
  std::size_t sample_rate = 4000;
  double clip_seconds = 2.0;
  dsp::RmsConfig rms = dsp::RmsConfig::toy();
  // Bound on predicted clean latents during sampling; 0 disables clipping.
  double latent_clip = 0.0;

  std::size_t num_classes() const { return semantic_table.defined() ? semantic_table.dim(0) : 0; }
  ad::Tensor semantic_for_class(int cls) const;
};

// Envelope -> audio-length waveform -> codec latent, padded to `frames`.
ad::Tensor control_latent(const LatentCodec& codec, const dsp::Envelope& envelope, std::size_t num_samples,
                          std::size_t frames);

// Latent frames used for a clip of num_samples, rounded up to whole patches.
std::size_t padded_latent_frames(const FoleyModel& m, std::size_t num_samples);

// Largest absolute latent value over a training set.
double max_abs_latent(const std::vector<LatentExample>& data);

LatentExample latent_example(const FoleyModel& m, const dsp::Waveform& audio, const dsp::Envelope& envelope,
                             const ad::Tensor& semantic);

struct GenerateRequest {
  std::optional<dsp::Envelope> envelope;  // ControlNet input; none runs the base alone
  ad::Tensor semantic;                    // [1, cross_attn_dim]; undefined -> null embedding
  std::size_t steps = 150;
  double cfg_scale = 2.0;
  std::uint64_t seed = 0;
  double seconds_start = 0.0;
  std::optional<double> seconds_total;    // defaults to the model clip length

  nlohmann::json to_json() const;
};

// Decoded mono audio clamped to [-1, 1].
dsp::Waveform generate(FoleyModel& m, const GenerateRequest& req);

void save_model(const std::filesystem::path& dir, FoleyModel& m);
FoleyModel load_model(const std::filesystem::path& dir);

}  // namespace foley::dit
