#include "foley/toybench/toybench.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "foley/error.hpp"
#include "foley/io/envelope_json.hpp"
#include "foley/io/tensor_file.hpp"
#include "foley/io/wav.hpp"

namespace foley::toybench {

namespace {

constexpr std::uint64_t kFeatureMatrixSeed = 0xFEA7u;
constexpr std::uint64_t kSemanticSeed = 0x5E3Au;

Eigen::MatrixXd orthonormal_columns(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double amplitude_at(const ToySpec& spec, const ToyEvent& e, double t) {
  const double dt = t - e.onset;
  if (dt < 0.0) return 0.0;
  const double attack = spec.attack_seconds > 0.0 ? std::min(1.0, dt / spec.attack_seconds) : 1.0;
  return e.amplitude * attack * std::exp(-dt / e.decay);
}

double companded(double v, const dsp::RmsConfig& rms) { return std::log1p(rms.mu * v) / std::log1p(rms.mu); }

}  // namespace

std::size_t ToySpec::clip_samples() const {
  return static_cast<std::size_t>(std::llround(clip_seconds * static_cast<double>(sample_rate)));
}

void ToySpec::validate() const {
  if (sample_rate == 0 || !(clip_seconds > 0.0)) throw InvalidInput("toy spec needs positive rate and duration");
  if (frequencies.empty()) throw InvalidInput("toy spec needs at least one timbre class");
  for (double f : frequencies)
    if (!(f > 0.0 && f < 0.5 * static_cast<double>(sample_rate)))
      throw InvalidInput("toy frequency " + std::to_string(f) + " Hz is not below Nyquist");
  if (min_events > max_events) throw InvalidInput("min_events > max_events");
  if (!(min_decay > 0.0 && min_decay <= max_decay)) throw InvalidInput("invalid decay range");
  if (feature_dim < points_per_frame) throw InvalidInput("feature_dim must be >= points_per_frame");
  if (semantic_dim < frequencies.size()) throw InvalidInput("semantic_dim must be >= number of classes");
  rms.validate();
}

ad::Tensor feature_matrix(const ToySpec& spec) {
  const Eigen::MatrixXd m = orthonormal_columns(spec.feature_dim, spec.points_per_frame, kFeatureMatrixSeed);
  std::vector<double> data(spec.feature_dim * spec.points_per_frame);
  for (std::size_t i = 0; i < spec.feature_dim; ++i)
    for (std::size_t j = 0; j < spec.points_per_frame; ++j)
      data[i * spec.points_per_frame + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return ad::Tensor::from_data({spec.feature_dim, spec.points_per_frame}, std::move(data));
}

ad::Tensor envelope_features(const ToySpec& spec, const dsp::Envelope& smoothed, Rng* noise) {
  const std::size_t points = spec.feature_frames * spec.points_per_frame;
  const dsp::Envelope dense = dsp::resample_envelope(smoothed, points);
  const ad::Tensor m = feature_matrix(spec);
  std::vector<double> out(spec.feature_frames * spec.feature_dim, 0.0);
  for (std::size_t f = 0; f < spec.feature_frames; ++f) {
    for (std::size_t i = 0; i < spec.feature_dim; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < spec.points_per_frame; ++j)
        acc += m.data()[i * spec.points_per_frame + j] * companded(dense.values[f * spec.points_per_frame + j], spec.rms);
      out[f * spec.feature_dim + i] = acc;
    }
  }
  if (spec.hard_mode && noise)
    for (auto& v : out) v += noise->normal(0.0, spec.hard_noise);
  return ad::Tensor::from_data({spec.feature_frames, spec.feature_dim}, std::move(out));
}

ad::Tensor class_embedding_table(const ToySpec& spec) {
  const Eigen::MatrixXd q = orthonormal_columns(spec.semantic_dim, spec.num_classes(), kSemanticSeed);
  std::vector<double> data(spec.num_classes() * spec.semantic_dim);
  for (std::size_t c = 0; c < spec.num_classes(); ++c)
    for (std::size_t d = 0; d < spec.semantic_dim; ++d)
      data[c * spec.semantic_dim + d] = q(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c));
  return ad::Tensor::from_data({spec.num_classes(), spec.semantic_dim}, std::move(data));
}

ad::Tensor class_embedding(const ToySpec& spec, int timbre) {
  if (timbre < 0 || static_cast<std::size_t>(timbre) >= spec.num_classes())
    throw InvalidInput("timbre class " + std::to_string(timbre) + " out of range");
  const ad::Tensor table = class_embedding_table(spec);
  const auto row = table.data().subspan(static_cast<std::size_t>(timbre) * spec.semantic_dim, spec.semantic_dim);
  return ad::Tensor::from_data({1, spec.semantic_dim}, std::vector<double>(row.begin(), row.end()));
}

ToyClip make_clip(const ToySpec& spec, int timbre, std::vector<ToyEvent> events, Rng& feature_noise) {
  spec.validate();
  if (timbre < 0 || static_cast<std::size_t>(timbre) >= spec.num_classes())
    throw InvalidInput("timbre class " + std::to_string(timbre) + " out of range");
  const std::size_t n = spec.clip_samples();
  const double rate = static_cast<double>(spec.sample_rate);
  const double freq = spec.frequencies[static_cast<std::size_t>(timbre)];
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    double amp = 0.0;
    for (const auto& e : events) amp += amplitude_at(spec, e, t);
    // One carrier per clip keeps overlapping bursts phase-coherent.
    y[i] = amp * std::sin(2.0 * std::numbers::pi * freq * t);
  }
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));

  ToyClip clip;
  clip.timbre = timbre;
  clip.events = std::move(events);
  clip.gain = peak > 0.0 ? 1.0 / peak : 1.0;
  for (auto& v : y) v *= clip.gain;
  clip.waveform = dsp::Waveform::mono(spec.sample_rate, std::move(y));
  clip.envelope = dsp::compute_rms(clip.waveform, spec.rms);
  clip.smoothed = dsp::smooth_envelope(clip.envelope, spec.rms.smoothing_kernel);
  clip.features = envelope_features(spec, clip.smoothed, &feature_noise);
  return clip;
}

ToyClip gen_clip(const ToySpec& spec, Rng& rng) {
  spec.validate();
  const int timbre = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(spec.num_classes()) - 1));
  const auto count = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec.min_events), static_cast<std::int64_t>(spec.max_events)));
  std::vector<ToyEvent> events(count);
  const double latest = std::max(0.0, spec.clip_seconds - 0.1);
  for (auto& e : events) {
    e.onset = rng.uniform(0.0, latest);
    e.amplitude = rng.uniform(spec.min_amplitude, spec.max_amplitude);
    e.decay = rng.uniform(spec.min_decay, spec.max_decay);
  }
  return make_clip(spec, timbre, std::move(events), rng);
}

std::vector<ToyClip> gen_dataset(const ToySpec& spec, std::size_t count, std::uint64_t stream_offset) {
  std::vector<ToyClip> clips;
  clips.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(spec.seed, stream_offset + i));
    clips.push_back(gen_clip(spec, rng));
  }
  return clips;
}

dsp::Envelope analytic_envelope(const ToySpec& spec, const ToyClip& clip) {
  const std::size_t n = clip.waveform.num_frames();
  const double rate = static_cast<double>(spec.sample_rate);
  std::vector<double> amp(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    for (const auto& e : clip.events) amp[i] += amplitude_at(spec, e, t);
    amp[i] *= clip.gain;
  }
  const std::size_t hop = spec.rms.hop, window = spec.rms.window;
  const std::size_t frames = (n + hop - 1) / hop;
  dsp::Envelope e;
  e.hop = hop;
  e.source_sample_rate = spec.sample_rate;
  e.values.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t j = 0; j < window; ++j) {
      const std::size_t idx = f * hop + j;
      if (idx < n) acc += amp[idx] * amp[idx];
    }
    e.values[f] = std::min(1.0, std::sqrt(acc / (2.0 * static_cast<double>(window))));
  }
  return e;
}

double goertzel_power(std::span<const double> samples, double frequency, double sample_rate) {
  const double w = 2.0 * std::numbers::pi * frequency / sample_rate;
  const double coeff = 2.0 * std::cos(w);
  double s1 = 0.0, s2 = 0.0;
  for (double x : samples) {
    const double s0 = x + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return s1 * s1 + s2 * s2 - coeff * s1 * s2;
}

int dominant_class(const ToySpec& spec, std::span<const double> samples) {
  int best = 0;
  double best_power = -1.0;
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    const double p = goertzel_power(samples, spec.frequencies[c], static_cast<double>(spec.sample_rate));
    if (p > best_power) {
      best_power = p;
      best = static_cast<int>(c);
    }
  }
  return best;
}

nlohmann::json spec_to_json(const ToySpec& spec) {
  return {{"sample_rate", spec.sample_rate},
          {"clip_seconds", spec.clip_seconds},
          {"frequencies", spec.frequencies},
          {"min_events", spec.min_events},
          {"max_events", spec.max_events},
          {"attack_seconds", spec.attack_seconds},
          {"decay", {spec.min_decay, spec.max_decay}},
          {"amplitude", {spec.min_amplitude, spec.max_amplitude}},
          {"feature_frames", spec.feature_frames},
          {"feature_dim", spec.feature_dim},
          {"points_per_frame", spec.points_per_frame},
          {"semantic_dim", spec.semantic_dim},
          {"hard_mode", spec.hard_mode},
          {"hard_noise", spec.hard_noise},
          {"rms", io::rms_config_to_json(spec.rms)},
          {"seed", spec.seed}};
}

ToySpec spec_from_json(const nlohmann::json& j) {
  ToySpec s;
  s.sample_rate = j.value("sample_rate", s.sample_rate);
  s.clip_seconds = j.value("clip_seconds", s.clip_seconds);
  s.frequencies = j.value("frequencies", s.frequencies);
  s.min_events = j.value("min_events", s.min_events);
  s.max_events = j.value("max_events", s.max_events);
  s.attack_seconds = j.value("attack_seconds", s.attack_seconds);
  if (j.contains("decay")) {
    s.min_decay = j["decay"].at(0);
    s.max_decay = j["decay"].at(1);
  }
  if (j.contains("amplitude")) {
    s.min_amplitude = j["amplitude"].at(0);
    s.max_amplitude = j["amplitude"].at(1);
  }
  s.feature_frames = j.value("feature_frames", s.feature_frames);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.points_per_frame = j.value("points_per_frame", s.points_per_frame);
  s.semantic_dim = j.value("semantic_dim", s.semantic_dim);
  s.hard_mode = j.value("hard_mode", s.hard_mode);
  s.hard_noise = j.value("hard_noise", s.hard_noise);
  if (j.contains("rms")) s.rms = io::rms_config_from_json(j["rms"], s.rms);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

void write_dataset(const std::filesystem::path& dir, const ToySpec& spec, const std::vector<ToyClip>& clips) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "wav");
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "envelopes");
  std::vector<io::ManifestEntry> entries;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "toy%05zu", i);
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_0_%g", id, spec.clip_seconds);
    const auto& clip = clips[i];
    io::write_wav(dir / "wav" / (std::string(stem) + ".wav"), clip.waveform, io::WavEncoding::float32);
    io::TensorData t;
    t.dims.assign(clip.features.shape().begin(), clip.features.shape().end());
    t.values = clip.features.values();
    io::write_tensor(dir / "features" / (std::string(stem) + ".ftns"), t);
    io::write_envelope(dir / "envelopes" / (std::string(stem) + ".json"), clip.envelope);
    io::ManifestEntry e;
    e.id = id;
    e.start = 0.0;
    e.end = spec.clip_seconds;
    e.audio_path = "wav/" + std::string(stem) + ".wav";
    e.feature_path = "features/" + std::string(stem) + ".ftns";
    e.envelope_path = "envelopes/" + std::string(stem) + ".json";
    e.label = clip.timbre;
    entries.push_back(std::move(e));
  }
  io::write_manifest(dir / "manifest.jsonl", entries);
  nlohmann::json info = spec_to_json(spec);
  info["count"] = clips.size();
  io::write_json(dir / "toyspec.json", info);
}

}  // namespace foley::toybench
