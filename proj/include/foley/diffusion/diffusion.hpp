#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "foley/ad/nn.hpp"
#include "foley/ad/tensor.hpp"
#include "foley/rng.hpp"

namespace foley::diffusion {

// Timesteps are 1-based: index t - 1 holds the constants for step t.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  // Timestep of the training schedule each step corresponds to (what the
  // model is conditioned on). Identity for an un-respaced schedule.
  std::vector<std::size_t> model_timestep;
  // Length of the training schedule the model was trained with.
  std::size_t train_steps = 0;

  std::size_t steps() const { return beta.size(); }
  // alpha_bar_{t}, with alpha_bar_0 = 1.
  double alpha_bar_at(std::size_t t) const;
  void check_timestep(std::size_t t) const;
};

NoiseSchedule make_linear_schedule(std::size_t T, double beta_start = 1e-4, double beta_end = 0.02);

// Stride-subsampled ladder of `steps` timesteps from 1 to T (inclusive) with
// betas recomputed so the cumulative products match the base schedule.
NoiseSchedule respace(const NoiseSchedule& base, std::size_t steps);

// sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
double posterior_variance(const NoiseSchedule& s, std::size_t t);

struct ConditioningBundle {
  std::optional<ad::Tensor> semantic;        // [tokens, dim]
  double seconds_start = 0.0;
  double seconds_total = 1.0;
  std::optional<ad::Tensor> control_latent;  // same shape as the latent
  // Replace the semantic tokens with the learned null embedding.
  bool drop_semantic = false;

  void validate() const;
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // Predicts the noise in z_t at training-schedule timestep t.
  virtual ad::Tensor predict_noise(const ad::Tensor& z_t, std::size_t t, const ConditioningBundle& cond) = 0;
};

ad::Tensor q_sample(const ad::Tensor& z0, std::size_t t, const ad::Tensor& eps, const NoiseSchedule& s);

// Noise-prediction MSE at a uniformly drawn timestep. The semantic condition
// is dropped with probability cfg_dropout.
ad::Tensor ddpm_loss(Denoiser& model, const ad::Tensor& z0, const ConditioningBundle& cond, const NoiseSchedule& s,
                     Rng& rng, double cfg_dropout = 0.1);

// Same loss at a given timestep and noise draw.
ad::Tensor ddpm_loss_at(Denoiser& model, const ad::Tensor& z0, const ConditioningBundle& cond,
                        const NoiseSchedule& s, std::size_t t, const ad::Tensor& eps);

ad::Tensor cfg_combine(const ad::Tensor& eps_cond, const ad::Tensor& eps_uncond, double scale);

// Guided noise estimate; evaluates the model twice when scale != 1 and a
// semantic condition is present.
ad::Tensor guided_noise(Denoiser& model, const ad::Tensor& z_t, std::size_t model_t, const ConditioningBundle& cond,
                        double cfg_scale);

// Posterior mean from a noise estimate.
ad::Tensor posterior_mean(const ad::Tensor& z_t, const ad::Tensor& eps, const NoiseSchedule& s, std::size_t t);

// x0 implied by a noise estimate.
ad::Tensor predict_x0(const ad::Tensor& z_t, const ad::Tensor& eps, const NoiseSchedule& s, std::size_t t);
// Posterior mean of q(z_{t-1} | z_t, x0).
ad::Tensor posterior_mean_from_x0(const ad::Tensor& z_t, const ad::Tensor& x0, const NoiseSchedule& s, std::size_t t);

// One ancestral step z_t -> z_{t-1}; no noise is added at t = 1. With
// clip_x0 > 0 the implied x0 is clamped to [-clip_x0, clip_x0] first.
ad::Tensor p_step(Denoiser& model, const ad::Tensor& z_t, std::size_t t, const ConditioningBundle& cond,
                  const NoiseSchedule& s, Rng& rng, double cfg_scale = 1.0, double clip_x0 = 0.0);

// Full reverse chain from z_T ~ N(0, I) over a respaced ladder of `steps`.
ad::Tensor sample(Denoiser& model, const ad::Shape& shape, const ConditioningBundle& cond, const NoiseSchedule& base,
                  std::size_t steps, double cfg_scale, Rng& rng, double clip_x0 = 0.0);

// Sinusoidal features of a scalar: [sin(v w_i), cos(v w_i)] with geometric frequencies.
std::vector<double> fourier_features(double value, std::size_t dim, double max_period = 10000.0);

// Small MLP noise predictor over rows of [B, D] data; used for sanity experiments.
class MlpDenoiser : public Denoiser, public ad::Module {
 public:
  MlpDenoiser(std::size_t data_dim, std::size_t hidden, std::size_t train_steps, Rng& rng);

  ad::Tensor predict_noise(const ad::Tensor& z_t, std::size_t t, const ConditioningBundle& cond) override;
  void visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix = "") override;

 private:
  std::size_t train_steps_;
  std::size_t time_dim_ = 16;
  ad::Linear in_, mid_, out_;
};

}  // namespace foley::diffusion
