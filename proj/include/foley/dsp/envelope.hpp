#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace foley::dsp {

// Multi-channel sampled audio. channels[c][i] is sample i of channel c.
struct Waveform {
  std::size_t sample_rate = 0;
  std::vector<std::vector<double>> channels;

  static Waveform mono(std::size_t sample_rate, std::vector<double> samples);

  std::size_t num_channels() const { return channels.size(); }
  std::size_t num_frames() const { return channels.empty() ? 0 : channels.front().size(); }
  double duration_seconds() const;
  bool empty() const { return num_frames() == 0; }

  // Throws InvalidInput unless sample_rate > 0, 1-2 channels of equal length.
  void validate() const;
};

struct RmsConfig {
  std::size_t window = 512;
  std::size_t hop = 128;
  std::size_t smoothing_kernel = 15;
  std::size_t num_classes = 64;
  double mu = 63.0;

  // 4 kHz configuration with the same 32 ms / 8 ms window/hop timing as the 16 kHz default.
  static RmsConfig toy();

  void validate() const;
};

struct Envelope {
  std::vector<double> values;
  std::size_t hop = 1;
  std::size_t source_sample_rate = 1;

  std::size_t size() const { return values.size(); }
};

struct QuantizedEnvelope {
  std::vector<int> classes;
  std::size_t num_classes = 64;
  std::size_t hop = 1;
  std::size_t source_sample_rate = 1;

  std::size_t size() const { return classes.size(); }
};

// Per-frame class distributions, frames x num_classes row-major.
struct TargetDistribution {
  std::size_t num_classes = 0;
  std::vector<double> probs;

  std::size_t frames() const { return num_classes ? probs.size() / num_classes : 0; }
  std::span<const double> frame(std::size_t i) const {
    return {probs.data() + i * num_classes, num_classes};
  }
};

// Index of the first value outside [0,1] (or non-finite), if any.
std::optional<std::size_t> first_out_of_range(std::span<const double> values);

// Throws InvalidInput when the envelope is empty or has values outside [0,1].
void validate_envelope(const Envelope& e);

Waveform normalize_waveform(const Waveform& w);

// Averages all channels into one.
Waveform downmix(const Waveform& w);

// Frame i covers samples [i*hop, i*hop + window), zero-padded past the end;
// ceil(L / hop) frames. Requires a mono waveform.
Envelope compute_rms(const Waveform& w, const RmsConfig& cfg);
Envelope compute_rms(std::span<const double> samples, std::size_t sample_rate, const RmsConfig& cfg);

// One envelope per channel.
std::vector<Envelope> compute_rms_per_channel(const Waveform& w, const RmsConfig& cfg);

// Centered moving average with edge replication; kernel must be odd.
Envelope smooth_envelope(const Envelope& e, std::size_t kernel);

QuantizedEnvelope mu_law_compress(const Envelope& e, const RmsConfig& cfg);
int mu_law_class(double value, const RmsConfig& cfg);

// Maps each class to the inverse transform of its bin center.
Envelope mu_law_expand(const QuantizedEnvelope& q, const RmsConfig& cfg);
double mu_law_bin_center(int cls, const RmsConfig& cfg);
// Value range [lo, hi) covered by a class.
std::pair<double, double> mu_law_bin_edges(int cls, const RmsConfig& cfg);

// Truncated Gaussian around each ground-truth class, normalized per frame.
// Class 0 (silence) is excluded from every support and maps to a one-hot.
TargetDistribution gaussian_label_smooth(const QuantizedEnvelope& q, double sigma, std::size_t window);

// Linear interpolation with endpoints aligned.
Envelope resample_envelope(const Envelope& e, std::size_t target_len);

// Stretches an envelope to sample rate resolution so it can be encoded like audio.
Waveform envelope_as_waveform(const Envelope& e, std::size_t num_samples, std::size_t sample_rate);

}  // namespace foley::dsp
