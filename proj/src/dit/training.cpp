#include "foley/dit/training.hpp"

#include "foley/ad/ops.hpp"
#include "foley/ad/optim.hpp"
#include "foley/error.hpp"

namespace foley::dit {

using diffusion::ConditioningBundle;

ConditioningBundle conditioning_for(const LatentExample& ex, bool with_control) {
  ConditioningBundle c;
  if (ex.semantic.defined()) c.semantic = ex.semantic;
  c.seconds_start = ex.seconds_start;
  c.seconds_total = ex.seconds_total;
  if (with_control) {
    if (!ex.control.defined()) throw InvalidInput("training example has no control latent");
    c.control_latent = ex.control;
  }
  return c;
}

namespace {

TrainReport run_training(diffusion::Denoiser& model, std::vector<ad::Tensor> params,
                         const std::vector<LatentExample>& data, const diffusion::NoiseSchedule& s,
                         const DiffusionTrainConfig& cfg, bool with_control) {
  if (data.empty()) throw InvalidInput("diffusion training needs a non-empty dataset");
  if (cfg.batch == 0) throw InvalidInput("batch size must be positive");
  Rng rng(cfg.seed);
  ad::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  acfg.decoupled = true;
  ad::Adam opt(std::move(params), acfg);
  TrainReport report;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto& ex = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      const ad::Tensor loss = diffusion::ddpm_loss(model, ex.latent, conditioning_for(ex, with_control), s, rng,
                                                   cfg.cfg_dropout);
      ad::backward(ad::scale(loss, 1.0 / static_cast<double>(cfg.batch)));
      total += loss.item();
    }
    if (cfg.grad_clip > 0.0) opt.clip(cfg.grad_clip);
    opt.step();
    const double mean = total / static_cast<double>(cfg.batch);
    report.losses.push_back(mean);
    if (cfg.on_step) cfg.on_step(step, mean);
  }
  return report;
}

}  // namespace

TrainReport train_base(DiTModel& model, const std::vector<LatentExample>& data, const diffusion::NoiseSchedule& s,
                       const DiffusionTrainConfig& cfg) {
  return run_training(model, model.parameters(), data, s, cfg, false);
}

TrainReport train_controlnet(DiTModel& base, ControlNetBranch& branch, const std::vector<LatentExample>& data,
                             const diffusion::NoiseSchedule& s, const DiffusionTrainConfig& cfg) {
  for (auto& p : base.parameters())
    if (p.requires_grad()) throw InvalidInput("base model must be frozen before ControlNet training");
  ControlledDiT model(base, branch);
  return run_training(model, branch.parameters(), data, s, cfg, true);
}

std::vector<double> windowed_means(const std::vector<double>& values, std::size_t window) {
  std::vector<double> out;
  if (window == 0) return out;
  for (std::size_t i = 0; i + window <= values.size(); i += window) {
    double s = 0.0;
    for (std::size_t j = i; j < i + window; ++j) s += values[j];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

}  // namespace foley::dit
