#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <vector>

#include "foley/ad/nn.hpp"
#include "foley/dsp/envelope.hpp"
#include "foley/rng.hpp"

namespace foley::predictor {

enum class Head { classification, regression };

struct PredictorConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> channels{32, 32, 32};
  std::vector<std::size_t> upsample_sizes{120, 240, 250};
  std::size_t kernel = 3;
  std::size_t lstm_hidden = 32;
  std::size_t lstm_layers = 2;
  std::size_t num_classes = 64;
  double sigma = 1.0;
  std::size_t smoothing_window = 3;
  Head head = Head::classification;

  std::size_t output_frames() const { return upsample_sizes.back(); }
  void validate() const;
  nlohmann::json to_json() const;
  static PredictorConfig from_json(const nlohmann::json& j);
  // 1024-dim features, 300 video frames -> 1250 envelope frames.
  static PredictorConfig paper();
};

// Conv/BN/ReLU/upsample blocks, a bidirectional LSTM and a per-frame head.
class EnvelopePredictor : public ad::Module {
 public:
  EnvelopePredictor(const PredictorConfig& cfg, Rng& rng);

  const PredictorConfig& config() const { return cfg_; }

  // features [B, T, D] or [T, D] -> logits [B, frames, classes] (classification)
  // or amplitudes in (0, 1) as [B, frames, 1] (regression). Unbatched input
  // drops the batch axis.
  ad::Tensor forward(const ad::Tensor& features, bool training);

  void visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix = "") override;
  void visit_buffers(const ad::BufferVisitor& fn, const std::string& prefix = "") override;

 private:
  PredictorConfig cfg_;
  std::vector<ad::Conv1d> convs_;
  std::vector<ad::BatchNorm1d> norms_;
  ad::BiLstm lstm_;
  ad::Linear out_;
};

struct PredictorExample {
  ad::Tensor features;               // [T, D]
  dsp::Envelope envelope;            // continuous ground truth, output_frames long
  dsp::QuantizedEnvelope classes;    // mu-law classes of `envelope`
  dsp::TargetDistribution target;    // label-smoothed classes
};

PredictorExample make_example(const ad::Tensor& features, const dsp::Envelope& envelope, const PredictorConfig& cfg,
                              const dsp::RmsConfig& rms);

struct Prediction {
  dsp::QuantizedEnvelope classes;
  dsp::Envelope envelope;
};

// Argmax per frame then mu-law expansion (classification), or the regressed
// values re-quantized (regression).
Prediction predict_envelope(EnvelopePredictor& model, const ad::Tensor& features, const dsp::RmsConfig& rms);
Prediction decode_output(const ad::Tensor& output, const PredictorConfig& cfg, const dsp::RmsConfig& rms);

struct PredictorEval {
  double e_l1 = 0.0;
  double acc1 = 0.0;
  double acc5 = 0.0;
  double acc10 = 0.0;
};

PredictorEval evaluate(EnvelopePredictor& model, const std::vector<PredictorExample>& data,
                       const dsp::RmsConfig& rms);

struct PredictorTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  std::function<void(std::size_t epoch, double train_loss, const PredictorEval& val)> on_epoch;
};

struct PredictorTrainReport {
  std::vector<double> train_loss;     // per epoch
  std::vector<PredictorEval> val;     // per epoch, empty without validation data
  std::size_t best_epoch = 0;
  double best_e_l1 = 0.0;
};

// Mean per-frame cross-entropy against the smoothed targets (MSE on the
// envelope for the regression head). With validation data, the parameters
// from the epoch with the lowest validation E-L1 are restored at the end.
PredictorTrainReport train_predictor(EnvelopePredictor& model, const std::vector<PredictorExample>& train,
                                     const std::vector<PredictorExample>& val, const PredictorTrainConfig& cfg,
                                     const dsp::RmsConfig& rms);

void save_predictor(const std::filesystem::path& dir, EnvelopePredictor& model, const dsp::RmsConfig& rms);
// Throws InvalidInput when `expected` is given and differs from the stored config.
std::unique_ptr<EnvelopePredictor> load_predictor(const std::filesystem::path& dir,
                                                  const PredictorConfig* expected = nullptr);

// RMS settings the checkpoint was trained with.
dsp::RmsConfig load_predictor_rms(const std::filesystem::path& dir);

}  // namespace foley::predictor
