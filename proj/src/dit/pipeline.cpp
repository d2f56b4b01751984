#include "foley/dit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "foley/ad/ops.hpp"
#include "foley/error.hpp"
#include "foley/io/checkpoint.hpp"
#include "foley/io/envelope_json.hpp"

namespace foley::dit {

using ad::Tensor;

nlohmann::json ScheduleConfig::to_json() const {
  return {{"T", train_steps}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

ScheduleConfig ScheduleConfig::from_json(const nlohmann::json& j) {
  ScheduleConfig c;
  c.train_steps = j.value("T", c.train_steps);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  return c;
}

Tensor FoleyModel::semantic_for_class(int cls) const {
  if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes())
    throw InvalidInput("semantic class " + std::to_string(cls) + " out of range [0, " +
                       std::to_string(num_classes()) + ")");
  const std::size_t dim = semantic_table.dim(1);
  const auto row = semantic_table.data().subspan(static_cast<std::size_t>(cls) * dim, dim);
  return Tensor::from_data({1, dim}, std::vector<double>(row.begin(), row.end()));
}

std::size_t padded_latent_frames(const FoleyModel& m, std::size_t num_samples) {
  const std::size_t frames = m.codec->latent_frames(num_samples);
  const std::size_t patch = m.base->config().patch;
  return (frames + patch - 1) / patch * patch;
}

namespace {

Tensor pad_frames(const Tensor& latent, std::size_t frames) {
  if (latent.dim(0) == frames) return latent;
  std::vector<double> data(frames * latent.dim(1), 0.0);
  std::copy(latent.data().begin(), latent.data().end(), data.begin());
  return Tensor::from_data({frames, latent.dim(1)}, std::move(data));
}

}  // namespace

Tensor control_latent(const LatentCodec& codec, const dsp::Envelope& envelope, std::size_t num_samples,
                      std::size_t frames) {
  dsp::validate_envelope(envelope);
  const auto wave = dsp::resample_envelope(envelope, num_samples);
  return pad_frames(codec.encode(wave.values), frames);
}

LatentExample latent_example(const FoleyModel& m, const dsp::Waveform& audio, const dsp::Envelope& envelope,
                             const Tensor& semantic) {
  const std::size_t n = audio.num_frames();
  const std::size_t frames = padded_latent_frames(m, n);
  LatentExample ex;
  ex.latent = pad_frames(m.codec->encode(audio), frames);
  ex.control = control_latent(*m.codec, envelope, n, frames);
  ex.semantic = semantic;
  ex.seconds_start = 0.0;
  ex.seconds_total = static_cast<double>(n) / static_cast<double>(audio.sample_rate);
  return ex;
}

double max_abs_latent(const std::vector<LatentExample>& data) {
  double m = 0.0;
  for (const auto& ex : data)
    for (double v : ex.latent.data()) m = std::max(m, std::abs(v));
  return m;
}

nlohmann::json GenerateRequest::to_json() const {
  nlohmann::json j{{"steps", steps}, {"cfg_scale", cfg_scale}, {"seed", seed}, {"seconds_start", seconds_start}};
  if (seconds_total) j["seconds_total"] = *seconds_total;
  if (envelope) j["envelope"] = io::envelope_to_json(*envelope);
  if (semantic.defined()) j["semantic"] = semantic.values();
  return j;
}

dsp::Waveform generate(FoleyModel& m, const GenerateRequest& req) {
  if (!m.codec || !m.base) throw InvalidInput("model is missing its codec or base network");
  if (req.steps == 0) throw InvalidInput("steps must be positive");
  const double total = req.seconds_total.value_or(m.clip_seconds);
  if (!(total > 0.0) || !std::isfinite(total)) throw InvalidInput("seconds_total must be positive");
  const auto num_samples = static_cast<std::size_t>(std::llround(total * static_cast<double>(m.sample_rate)));
  const std::size_t frames = padded_latent_frames(m, num_samples);

  diffusion::ConditioningBundle cond;
  if (req.semantic.defined()) cond.semantic = req.semantic;
  cond.seconds_start = req.seconds_start;
  cond.seconds_total = total;
  Rng rng(req.seed);
  Tensor z;
  const ad::Shape shape{frames, m.base->config().latent_channels};
  if (req.envelope) {
    if (!m.controlnet) throw InvalidInput("envelope conditioning needs a trained ControlNet");
    cond.control_latent = control_latent(*m.codec, *req.envelope, num_samples, frames);
    ControlledDiT model(*m.base, *m.controlnet);
    z = diffusion::sample(model, shape, cond, m.schedule, req.steps, req.cfg_scale, rng, m.latent_clip);
  } else {
    z = diffusion::sample(*m.base, shape, cond, m.schedule, req.steps, req.cfg_scale, rng, m.latent_clip);
  }
  auto w = m.codec->decode(z, num_samples, m.sample_rate);
  for (auto& v : w.channels[0]) v = std::clamp(v, -1.0, 1.0);
  return w;
}

void save_model(const std::filesystem::path& dir, FoleyModel& m) {
  if (!m.codec || !m.base) throw InvalidInput("model is missing its codec or base network");
  std::filesystem::create_directories(dir);
  const auto codec_hash = ad::parameter_hash(*m.codec);
  const auto base_hash = ad::parameter_hash(*m.base);
  io::save_checkpoint(dir / "codec", *m.codec,
                      {{"kind", "codec"}, {"config", m.codec->config().to_json()}, {"latent_scale", m.codec->latent_scale}});
  io::save_checkpoint(dir / "base", *m.base,
                      {{"kind", "dit"}, {"config", m.base->config().to_json()}, {"codec_hash", codec_hash}});
  nlohmann::json j{{"format", "foley-model-1"},
                   {"sample_rate", m.sample_rate},
                   {"clip_seconds", m.clip_seconds},
                   {"schedule", m.schedule_config.to_json()},
                   {"rms", io::rms_config_to_json(m.rms)},
                   {"latent_clip", m.latent_clip},
                   {"codec_hash", codec_hash},
                   {"base_hash", base_hash},
                   {"controlnet", static_cast<bool>(m.controlnet)}};
  if (m.controlnet) {
    io::save_checkpoint(dir / "controlnet", *m.controlnet,
                        {{"kind", "controlnet"}, {"layers", m.controlnet->size()}, {"base_hash", base_hash},
                         {"codec_hash", codec_hash}});
  }
  if (m.semantic_table.defined()) {
    j["semantic_table"] = {{"shape", m.semantic_table.shape()}, {"values", m.semantic_table.values()}};
  }
  io::write_json(dir / "model.json", j);
}

FoleyModel load_model(const std::filesystem::path& dir) {
  const auto j = io::read_json(dir / "model.json");
  if (j.value("format", std::string()) != "foley-model-1")
    throw InvalidInput(dir.string() + " is not a model directory");
  FoleyModel m;
  m.sample_rate = j.at("sample_rate").get<std::size_t>();
  m.clip_seconds = j.at("clip_seconds").get<double>();
  m.schedule_config = ScheduleConfig::from_json(j.at("schedule"));
  m.schedule = m.schedule_config.build();
  m.latent_clip = j.value("latent_clip", 0.0);
  m.rms = io::rms_config_from_json(j.at("rms"), dsp::RmsConfig::toy());

  Rng rng(0);
  const auto codec_meta = io::read_checkpoint_meta(dir / "codec");
  m.codec = std::make_unique<LatentCodec>(CodecConfig::from_json(codec_meta.at("config")), rng);
  io::load_checkpoint(dir / "codec", *m.codec);
  m.codec->latent_scale = codec_meta.at("latent_scale").get<double>();

  const auto base_meta = io::read_checkpoint_meta(dir / "base");
  m.base = std::make_unique<DiTModel>(DiTConfig::from_json(base_meta.at("config")), rng);
  io::load_checkpoint(dir / "base", *m.base);
  if (ad::parameter_hash(*m.base) != j.at("base_hash").get<std::uint64_t>())
    throw FormatError("base network hash mismatch in " + dir.string(), 0);

  if (j.value("controlnet", false)) {
    const auto meta = io::read_checkpoint_meta(dir / "controlnet");
    if (meta.at("base_hash").get<std::uint64_t>() != j.at("base_hash").get<std::uint64_t>())
      throw InvalidInput("ControlNet was trained against a different base network");
    DiTConfig cfg = m.base->config();
    const std::size_t layers = meta.at("layers");
    cfg.depth_factor = static_cast<double>(layers) / static_cast<double>(cfg.layers);
    m.controlnet = attach_controlnet(*m.base, cfg.depth_factor);
    if (m.controlnet->size() != layers) throw FormatError("ControlNet layer count mismatch", 0);
    io::load_checkpoint(dir / "controlnet", *m.controlnet);
  }
  m.base->set_trainable(false);
  if (j.contains("semantic_table")) {
    const auto& t = j.at("semantic_table");
    m.semantic_table = Tensor::from_data(t.at("shape").get<ad::Shape>(), t.at("values").get<std::vector<double>>());
  }
  return m;
}

}  // namespace foley::dit
