#include "foley/dsp/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "foley/error.hpp"

namespace foley::dsp {

Waveform Waveform::mono(std::size_t sample_rate, std::vector<double> samples) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.channels.push_back(std::move(samples));
  return w;
}

double Waveform::duration_seconds() const {
  return sample_rate ? static_cast<double>(num_frames()) / static_cast<double>(sample_rate) : 0.0;
}

void Waveform::validate() const {
  if (sample_rate == 0) throw InvalidInput("waveform sample rate must be positive");
  if (channels.empty() || channels.size() > 2)
    throw InvalidInput("waveform must have 1 or 2 channels, got " + std::to_string(channels.size()));
  for (const auto& ch : channels)
    if (ch.size() != channels.front().size()) throw InvalidInput("waveform channels differ in length");
}

RmsConfig RmsConfig::toy() {
  RmsConfig cfg;
  cfg.window = 128;
  cfg.hop = 32;
  return cfg;
}

void RmsConfig::validate() const {
  if (hop < 1 || window < hop)
    throw InvalidInput("rms config requires window >= hop >= 1 (window=" + std::to_string(window) +
                       ", hop=" + std::to_string(hop) + ")");
  if (smoothing_kernel < 1 || smoothing_kernel % 2 == 0)
    throw InvalidInput("smoothing kernel must be odd and >= 1");
  if (num_classes < 2) throw InvalidInput("num_classes must be >= 2");
  if (!(mu > 0.0)) throw InvalidInput("mu must be positive");
}

std::optional<std::size_t> first_out_of_range(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]) || values[i] < 0.0 || values[i] > 1.0) return i;
  return std::nullopt;
}

void validate_envelope(const Envelope& e) {
  if (e.values.empty()) throw InvalidInput("envelope is empty");
  if (auto bad = first_out_of_range(e.values))
    throw InvalidInput("envelope value at index " + std::to_string(*bad) + " is outside [0,1]");
}

Waveform normalize_waveform(const Waveform& w) {
  if (w.empty()) throw InvalidInput("cannot normalize an empty waveform");
  double peak = 0.0;
  for (const auto& ch : w.channels)
    for (double s : ch) peak = std::max(peak, std::abs(s));
  if (peak == 0.0) return w;
  Waveform out = w;
  for (auto& ch : out.channels)
    for (double& s : ch) s /= peak;
  return out;
}

Waveform downmix(const Waveform& w) {
  w.validate();
  if (w.num_channels() == 1) return w;
  std::vector<double> mono(w.num_frames(), 0.0);
  const double scale = 1.0 / static_cast<double>(w.num_channels());
  for (const auto& ch : w.channels)
    for (std::size_t i = 0; i < mono.size(); ++i) mono[i] += ch[i] * scale;
  return Waveform::mono(w.sample_rate, std::move(mono));
}

Envelope compute_rms(std::span<const double> samples, std::size_t sample_rate, const RmsConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw InvalidInput("cannot compute RMS of an empty signal");
  const std::size_t n = samples.size();
  const std::size_t frames = (n + cfg.hop - 1) / cfg.hop;
  Envelope env;
  env.hop = cfg.hop;
  env.source_sample_rate = sample_rate;
  env.values.resize(frames);
  const double inv_window = 1.0 / static_cast<double>(cfg.window);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::size_t begin = i * cfg.hop;
    const std::size_t end = std::min(n, begin + cfg.window);
    double acc = 0.0;
    for (std::size_t t = begin; t < end; ++t) acc += samples[t] * samples[t];
    env.values[i] = std::min(1.0, std::sqrt(acc * inv_window));
  }
  return env;
}

Envelope compute_rms(const Waveform& w, const RmsConfig& cfg) {
  w.validate();
  if (w.num_channels() != 1)
    throw InvalidInput("compute_rms expects mono input; downmix or select a channel first");
  return compute_rms(w.channels.front(), w.sample_rate, cfg);
}

std::vector<Envelope> compute_rms_per_channel(const Waveform& w, const RmsConfig& cfg) {
  w.validate();
  std::vector<Envelope> out;
  for (const auto& ch : w.channels) out.push_back(compute_rms(ch, w.sample_rate, cfg));
  return out;
}

Envelope smooth_envelope(const Envelope& e, std::size_t kernel) {
  if (kernel < 1 || kernel % 2 == 0)
    throw InvalidInput("smoothing kernel must be odd and >= 1, got " + std::to_string(kernel));
  if (e.values.empty()) throw InvalidInput("cannot smooth an empty envelope");
  Envelope out = e;
  if (kernel == 1) return out;
  const auto n = static_cast<std::ptrdiff_t>(e.values.size());
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  const double inv = 1.0 / static_cast<double>(kernel);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) acc += e.values[std::clamp<std::ptrdiff_t>(i + k, 0, n - 1)];
    out.values[i] = std::clamp(acc * inv, 0.0, 1.0);
  }
  return out;
}

int mu_law_class(double value, const RmsConfig& cfg) {
  if (!(value >= 0.0 && value <= 1.0))
    throw InvalidInput("mu-law input " + std::to_string(value) + " is outside [0,1]");
  const double n = static_cast<double>(cfg.num_classes);
  const double x = std::log1p(cfg.mu * value) / std::log1p(cfg.mu);
  const auto cls = static_cast<long>(std::floor(x * n));
  return static_cast<int>(std::min<long>(static_cast<long>(cfg.num_classes) - 1, cls));
}

QuantizedEnvelope mu_law_compress(const Envelope& e, const RmsConfig& cfg) {
  cfg.validate();
  QuantizedEnvelope q;
  q.num_classes = cfg.num_classes;
  q.hop = e.hop;
  q.source_sample_rate = e.source_sample_rate;
  q.classes.reserve(e.values.size());
  for (double v : e.values) q.classes.push_back(mu_law_class(v, cfg));
  return q;
}

namespace {

double mu_law_inverse(double x, double mu) { return std::expm1(x * std::log1p(mu)) / mu; }

void check_class(int cls, std::size_t num_classes) {
  if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes)
    throw InvalidInput("class " + std::to_string(cls) + " is outside [0," + std::to_string(num_classes - 1) + "]");
}

}  // namespace

double mu_law_bin_center(int cls, const RmsConfig& cfg) {
  check_class(cls, cfg.num_classes);
  const double n = static_cast<double>(cfg.num_classes);
  return mu_law_inverse((cls + 0.5) / n, cfg.mu);
}

std::pair<double, double> mu_law_bin_edges(int cls, const RmsConfig& cfg) {
  check_class(cls, cfg.num_classes);
  const double n = static_cast<double>(cfg.num_classes);
  return {mu_law_inverse(cls / n, cfg.mu), mu_law_inverse((cls + 1) / n, cfg.mu)};
}

Envelope mu_law_expand(const QuantizedEnvelope& q, const RmsConfig& cfg) {
  cfg.validate();
  if (q.num_classes != cfg.num_classes)
    throw InvalidInput("quantized envelope has " + std::to_string(q.num_classes) + " classes, config expects " +
                       std::to_string(cfg.num_classes));
  Envelope e;
  e.hop = q.hop;
  e.source_sample_rate = q.source_sample_rate;
  e.values.reserve(q.classes.size());
  for (int c : q.classes) e.values.push_back(mu_law_bin_center(c, cfg));
  return e;
}

TargetDistribution gaussian_label_smooth(const QuantizedEnvelope& q, double sigma, std::size_t window) {
  if (!(sigma > 0.0)) throw InvalidInput("label smoothing sigma must be positive");
  const std::size_t nc = q.num_classes;
  TargetDistribution dist;
  dist.num_classes = nc;
  dist.probs.assign(q.classes.size() * nc, 0.0);
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t f = 0; f < q.classes.size(); ++f) {
    const int gt = q.classes[f];
    check_class(gt, nc);
    double* row = dist.probs.data() + f * nc;
    if (gt == 0) {
      row[0] = 1.0;
      continue;
    }
    const long lo = std::max<long>(1, gt - static_cast<long>(window));
    const long hi = std::min<long>(static_cast<long>(nc) - 1, gt + static_cast<long>(window));
    double total = 0.0;
    for (long c = lo; c <= hi; ++c) {
      const double d = static_cast<double>(c - gt);
      row[c] = std::exp(-d * d / denom);
      total += row[c];
    }
    for (long c = lo; c <= hi; ++c) row[c] /= total;
  }
  return dist;
}

Envelope resample_envelope(const Envelope& e, std::size_t target_len) {
  if (target_len < 1) throw InvalidInput("resample target length must be >= 1");
  if (e.values.empty()) throw InvalidInput("cannot resample an empty envelope");
  const std::size_t n = e.values.size();
  Envelope out;
  out.source_sample_rate = e.source_sample_rate;
  out.hop = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(e.hop) * static_cast<double>(n) /
                                               static_cast<double>(target_len))));
  out.values.resize(target_len);
  if (n == 1 || target_len == 1) {
    std::fill(out.values.begin(), out.values.end(), e.values.front());
    return out;
  }
  const double scale = static_cast<double>(n - 1) / static_cast<double>(target_len - 1);
  for (std::size_t i = 0; i < target_len; ++i) {
    const double pos = static_cast<double>(i) * scale;
    const auto left = std::min(static_cast<std::size_t>(pos), n - 2);
    const double frac = pos - static_cast<double>(left);
    out.values[i] = e.values[left] * (1.0 - frac) + e.values[left + 1] * frac;
  }
  out.values.back() = e.values.back();
  return out;
}

Waveform envelope_as_waveform(const Envelope& e, std::size_t num_samples, std::size_t sample_rate) {
  return Waveform::mono(sample_rate, resample_envelope(e, num_samples).values);
}

}  // namespace foley::dsp
