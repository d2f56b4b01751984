#include "foley/predictor/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "foley/ad/ops.hpp"
#include "foley/ad/optim.hpp"
#include "foley/error.hpp"
#include "foley/io/checkpoint.hpp"
#include "foley/io/envelope_json.hpp"
#include "foley/metrics/metrics.hpp"

namespace foley::predictor {

using ad::Tensor;

namespace {

const char* head_name(Head h) { return h == Head::classification ? "classification" : "regression"; }

Head parse_head(const std::string& s) {
  if (s == "classification") return Head::classification;
  if (s == "regression") return Head::regression;
  throw InvalidInput("unknown predictor head '" + s + "'");
}

}  // namespace

void PredictorConfig::validate() const {
  if (input_dim == 0) throw InvalidInput("predictor input_dim must be positive");
  if (upsample_sizes.empty() || channels.size() != upsample_sizes.size())
    throw InvalidInput("predictor needs one channel count per upsample size");
  for (std::size_t i = 0; i < upsample_sizes.size(); ++i) {
    if (upsample_sizes[i] == 0 || channels[i] == 0) throw InvalidInput("predictor sizes must be positive");
    if (i > 0 && upsample_sizes[i] < upsample_sizes[i - 1])
      throw InvalidInput("upsample_sizes must be non-decreasing");
  }
  if (kernel % 2 == 0) throw InvalidInput("predictor conv kernel must be odd");
  if (lstm_hidden == 0 || lstm_layers == 0) throw InvalidInput("predictor LSTM must be non-empty");
  if (num_classes < 2) throw InvalidInput("predictor needs at least two classes");
}

nlohmann::json PredictorConfig::to_json() const {
  return {{"input_dim", input_dim},     {"channels", channels},       {"upsample_sizes", upsample_sizes},
          {"kernel", kernel},           {"lstm_hidden", lstm_hidden}, {"lstm_layers", lstm_layers},
          {"num_classes", num_classes}, {"sigma", sigma},             {"smoothing_window", smoothing_window},
          {"head", head_name(head)}};
}

PredictorConfig PredictorConfig::from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.channels = j.value("channels", c.channels);
  c.upsample_sizes = j.value("upsample_sizes", c.upsample_sizes);
  c.kernel = j.value("kernel", c.kernel);
  c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.sigma = j.value("sigma", c.sigma);
  c.smoothing_window = j.value("smoothing_window", c.smoothing_window);
  c.head = parse_head(j.value("head", std::string("classification")));
  c.validate();
  return c;
}

PredictorConfig PredictorConfig::paper() {
  PredictorConfig c;
  c.input_dim = 1024;
  c.channels = {512, 256, 128};
  c.upsample_sizes = {600, 1200, 1250};
  c.lstm_hidden = 128;
  return c;
}

EnvelopePredictor::EnvelopePredictor(const PredictorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  std::size_t in = cfg.input_dim;
  for (std::size_t c : cfg.channels) {
    convs_.emplace_back(in, c, cfg.kernel, rng, 1, cfg.kernel / 2);
    norms_.emplace_back(c);
    in = c;
  }
  lstm_ = ad::BiLstm(in, cfg.lstm_hidden, cfg.lstm_layers, rng);
  out_ = ad::Linear(2 * cfg.lstm_hidden, cfg.head == Head::classification ? cfg.num_classes : 1, rng);
}

Tensor EnvelopePredictor::forward(const Tensor& features, bool training) {
  const bool unbatched = features.rank() == 2;
  const Tensor x3 = unbatched ? ad::reshape(features, {1, features.dim(0), features.dim(1)}) : features;
  if (x3.rank() != 3 || x3.dim(2) != cfg_.input_dim)
    throw ShapeError("predictor expects features [T, " + std::to_string(cfg_.input_dim) + "], got " +
                     ad::shape_str(features.shape()));
  if (x3.dim(1) == 0) throw ShapeError("predictor features need at least one frame");
  Tensor h = ad::transpose(x3, 1, 2);  // [B, D, T]
  for (std::size_t i = 0; i < convs_.size(); ++i)
    h = ad::upsample_linear(ad::relu(norms_[i].forward(convs_[i].forward(h), training)), cfg_.upsample_sizes[i]);
  h = lstm_.forward(ad::transpose(h, 1, 2));  // [B, L, 2H]
  Tensor out = out_.forward(h);
  if (cfg_.head == Head::regression) out = ad::sigmoid(out);
  return unbatched ? ad::select(out, 0, 0) : out;
}

void EnvelopePredictor::visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].visit_parameters(fn, prefix + "conv" + std::to_string(i) + ".");
    norms_[i].visit_parameters(fn, prefix + "bn" + std::to_string(i) + ".");
  }
  lstm_.visit_parameters(fn, prefix + "lstm.");
  out_.visit_parameters(fn, prefix + "out.");
}

void EnvelopePredictor::visit_buffers(const ad::BufferVisitor& fn, const std::string& prefix) {
  for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i].visit_buffers(fn, prefix + "bn" + std::to_string(i) + ".");
}

PredictorExample make_example(const Tensor& features, const dsp::Envelope& envelope, const PredictorConfig& cfg,
                              const dsp::RmsConfig& rms) {
  if (features.rank() != 2 || features.dim(1) != cfg.input_dim)
    throw ShapeError("example features must be [T, " + std::to_string(cfg.input_dim) + "], got " +
                     ad::shape_str(features.shape()));
  if (envelope.size() != cfg.output_frames())
    throw InvalidInput("example envelope has " + std::to_string(envelope.size()) + " frames, predictor emits " +
                       std::to_string(cfg.output_frames()));
  if (rms.num_classes != cfg.num_classes) throw InvalidInput("rms and predictor class counts differ");
  PredictorExample ex;
  ex.features = features;
  ex.envelope = envelope;
  ex.classes = dsp::mu_law_compress(envelope, rms);
  ex.target = dsp::gaussian_label_smooth(ex.classes, cfg.sigma, cfg.smoothing_window);
  return ex;
}

Prediction decode_output(const Tensor& output, const PredictorConfig& cfg, const dsp::RmsConfig& rms) {
  if (output.rank() != 2) throw ShapeError("decode_output expects [frames, K], got " + ad::shape_str(output.shape()));
  const std::size_t frames = output.dim(0), k = output.dim(1);
  Prediction p;
  p.classes.num_classes = cfg.num_classes;
  p.classes.classes.resize(frames);
  if (cfg.head == Head::classification) {
    if (k != cfg.num_classes) throw ShapeError("logit width does not match num_classes");
    for (std::size_t f = 0; f < frames; ++f) {
      const auto row = output.data().subspan(f * k, k);
      p.classes.classes[f] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    p.envelope = dsp::mu_law_expand(p.classes, rms);
  } else {
    p.envelope.values.assign(output.data().begin(), output.data().end());
    for (auto& v : p.envelope.values) v = std::clamp(v, 0.0, 1.0);
    p.classes = dsp::mu_law_compress(p.envelope, rms);
  }
  return p;
}

Prediction predict_envelope(EnvelopePredictor& model, const Tensor& features, const dsp::RmsConfig& rms) {
  ad::NoGradGuard guard;
  return decode_output(model.forward(features, false), model.config(), rms);
}

namespace {

Tensor stack_features(const std::vector<PredictorExample>& data, const std::vector<std::size_t>& idx) {
  std::vector<Tensor> parts;
  parts.reserve(idx.size());
  for (std::size_t i : idx) parts.push_back(data[i].features);
  return ad::stack(parts, 0);
}

Tensor batch_loss(EnvelopePredictor& model, const std::vector<PredictorExample>& data,
                  const std::vector<std::size_t>& idx) {
  const auto& cfg = model.config();
  const Tensor out = model.forward(stack_features(data, idx), true);
  const std::size_t frames = cfg.output_frames(), b = idx.size();
  if (cfg.head == Head::classification) {
    std::vector<double> target;
    target.reserve(b * frames * cfg.num_classes);
    for (std::size_t i : idx) target.insert(target.end(), data[i].target.probs.begin(), data[i].target.probs.end());
    return ad::soft_cross_entropy(ad::reshape(out, {b * frames, cfg.num_classes}),
                                  Tensor::from_data({b * frames, cfg.num_classes}, std::move(target)));
  }
  std::vector<double> target;
  target.reserve(b * frames);
  for (std::size_t i : idx) target.insert(target.end(), data[i].envelope.values.begin(), data[i].envelope.values.end());
  return ad::mse_loss(ad::reshape(out, {b * frames}), Tensor::from_data({b * frames}, std::move(target)));
}

struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> buffers;
};

Snapshot take_snapshot(EnvelopePredictor& m) {
  Snapshot s;
  m.visit_parameters([&](const std::string&, Tensor& p) { s.params.push_back(p.values()); });
  m.visit_buffers([&](const std::string&, std::vector<double>& b) { s.buffers.push_back(b); });
  return s;
}

void restore_snapshot(EnvelopePredictor& m, const Snapshot& s) {
  std::size_t i = 0, j = 0;
  m.visit_parameters([&](const std::string&, Tensor& p) {
    const auto& src = s.params[i++];
    std::copy(src.begin(), src.end(), p.mutable_data().begin());
  });
  m.visit_buffers([&](const std::string&, std::vector<double>& b) { b = s.buffers[j++]; });
}

}  // namespace

PredictorEval evaluate(EnvelopePredictor& model, const std::vector<PredictorExample>& data,
                       const dsp::RmsConfig& rms) {
  if (data.empty()) throw InvalidInput("cannot evaluate on an empty dataset");
  ad::NoGradGuard guard;
  PredictorEval e;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor out = model.forward(stack_features(data, idx), false);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto p = decode_output(ad::select(out, 0, b), model.config(), rms);
      const auto& ex = data[idx[b]];
      e.e_l1 += metrics::e_l1(p.envelope.values, ex.envelope.values);
      e.acc1 += metrics::acc_at_k(p.classes, ex.classes, 1);
      e.acc5 += metrics::acc_at_k(p.classes, ex.classes, 5);
      e.acc10 += metrics::acc_at_k(p.classes, ex.classes, 10);
    }
  }
  const auto n = static_cast<double>(data.size());
  e.e_l1 /= n;
  e.acc1 /= n;
  e.acc5 /= n;
  e.acc10 /= n;
  return e;
}

PredictorTrainReport train_predictor(EnvelopePredictor& model, const std::vector<PredictorExample>& train,
                                     const std::vector<PredictorExample>& val, const PredictorTrainConfig& cfg,
                                     const dsp::RmsConfig& rms) {
  if (train.empty()) throw InvalidInput("predictor training needs a non-empty dataset");
  if (cfg.batch == 0) throw InvalidInput("batch size must be positive");
  for (const auto& ex : train)
    if (ex.target.num_classes != model.config().num_classes)
      throw InvalidInput("training targets do not share the predictor's class count");
  Rng rng(cfg.seed);
  ad::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  ad::Adam opt(model.parameters(), acfg);
  PredictorTrainReport report;
  Snapshot best;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch)));
      opt.zero_grad();
      const Tensor loss = batch_loss(model, train, idx);
      ad::backward(loss);
      if (cfg.grad_clip > 0.0) opt.clip(cfg.grad_clip);
      opt.step();
      total += loss.item();
      ++batches;
    }
    report.train_loss.push_back(total / static_cast<double>(batches));
    PredictorEval ev;
    if (!val.empty()) {
      ev = evaluate(model, val, rms);
      report.val.push_back(ev);
      if (epoch == 0 || ev.e_l1 < report.best_e_l1) {
        report.best_e_l1 = ev.e_l1;
        report.best_epoch = epoch;
        best = take_snapshot(model);
      }
    }
    if (cfg.on_epoch) cfg.on_epoch(epoch, report.train_loss.back(), ev);
  }
  if (!val.empty() && !best.params.empty()) restore_snapshot(model, best);
  return report;
}

void save_predictor(const std::filesystem::path& dir, EnvelopePredictor& model, const dsp::RmsConfig& rms) {
  nlohmann::json meta{{"kind", "envelope-predictor"},
                      {"config", model.config().to_json()},
                      {"rms", io::rms_config_to_json(rms)}};
  io::save_checkpoint(dir, model, meta);
}

std::unique_ptr<EnvelopePredictor> load_predictor(const std::filesystem::path& dir, const PredictorConfig* expected) {
  const auto meta = io::read_checkpoint_meta(dir);
  if (meta.value("kind", std::string()) != "envelope-predictor")
    throw InvalidInput("checkpoint at " + dir.string() + " is not an envelope predictor");
  const auto cfg = PredictorConfig::from_json(meta.at("config"));
  if (expected && expected->to_json() != cfg.to_json())
    throw InvalidInput("predictor checkpoint config does not match the requested config");
  Rng rng(0);
  auto model = std::make_unique<EnvelopePredictor>(cfg, rng);
  io::load_checkpoint(dir, *model);
  return model;
}

dsp::RmsConfig load_predictor_rms(const std::filesystem::path& dir) {
  const auto meta = io::read_checkpoint_meta(dir);
  if (!meta.contains("rms")) throw InvalidInput("predictor checkpoint has no RMS settings");
  return io::rms_config_from_json(meta["rms"]);
}

}  // namespace foley::predictor
