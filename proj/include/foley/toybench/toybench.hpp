#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <vector>

#include "foley/ad/tensor.hpp"
#include "foley/dsp/envelope.hpp"
#include "foley/io/manifest.hpp"
#include "foley/rng.hpp"

namespace foley::toybench {

struct ToySpec {
  std::size_t sample_rate = 4000;
  double clip_seconds = 2.0;
  std::vector<double> frequencies{220.0, 440.0, 880.0, 1760.0};
  std::size_t min_events = 0;
  std::size_t max_events = 4;
  double attack_seconds = 0.002;
  double min_decay = 0.05;
  double max_decay = 0.25;
  double min_amplitude = 0.4;
  double max_amplitude = 1.0;
  // Video-rate feature sequence.
  std::size_t feature_frames = 60;
  std::size_t feature_dim = 16;
  std::size_t points_per_frame = 8;
  std::size_t semantic_dim = 8;
  // Adds Gaussian noise to the features.
  bool hard_mode = false;
  double hard_noise = 0.05;
  dsp::RmsConfig rms = dsp::RmsConfig::toy();
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return frequencies.size(); }
  std::size_t clip_samples() const;
  void validate() const;
};

struct ToyEvent {
  double onset = 0.0;      // seconds
  double amplitude = 1.0;
  double decay = 0.1;      // time constant, seconds
};

struct ToyClip {
  dsp::Waveform waveform;      // peak-normalized mono
  dsp::Envelope envelope;      // measured RMS of waveform
  dsp::Envelope smoothed;      // envelope after the smoothing filter
  int timbre = 0;
  std::vector<ToyEvent> events;
  double gain = 1.0;           // normalization gain applied to the raw sum of bursts
  ad::Tensor features;         // [feature_frames, feature_dim]
};

// Deterministic in (spec, rng state).
ToyClip gen_clip(const ToySpec& spec, Rng& rng);
// Builds a clip from explicit events.
ToyClip make_clip(const ToySpec& spec, int timbre, std::vector<ToyEvent> events, Rng& feature_noise);

// Clip i uses seed derive_seed(spec.seed, i).
std::vector<ToyClip> gen_dataset(const ToySpec& spec, std::size_t count, std::uint64_t stream_offset = 0);

// Envelope predicted by the burst model itself: per-window RMS of the
// amplitude curve times 1/sqrt(2) for the carrier.
dsp::Envelope analytic_envelope(const ToySpec& spec, const ToyClip& clip);

// Invertible map from a (smoothed) envelope to the video-rate feature sequence.
ad::Tensor envelope_features(const ToySpec& spec, const dsp::Envelope& smoothed, Rng* noise);
// Fixed orthonormal columns [feature_dim, points_per_frame] used by the feature map.
ad::Tensor feature_matrix(const ToySpec& spec);

// Fixed orthonormal semantic vector per timbre class, as [1, semantic_dim].
ad::Tensor class_embedding(const ToySpec& spec, int timbre);
// All classes as [num_classes, semantic_dim].
ad::Tensor class_embedding_table(const ToySpec& spec);

// Timbre class whose carrier frequency carries the most energy.
int dominant_class(const ToySpec& spec, std::span<const double> samples);
double goertzel_power(std::span<const double> samples, double frequency, double sample_rate);

nlohmann::json spec_to_json(const ToySpec& spec);
ToySpec spec_from_json(const nlohmann::json& j);

// Writes toyspec.json, manifest.jsonl plus wav/, features/ and envelopes/ subdirectories.
void write_dataset(const std::filesystem::path& dir, const ToySpec& spec, const std::vector<ToyClip>& clips);

}  // namespace foley::toybench
