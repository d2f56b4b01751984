#include "foley/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "foley/ad/ops.hpp"
#include "foley/error.hpp"

namespace foley::diffusion {

double NoiseSchedule::alpha_bar_at(std::size_t t) const {
  if (t == 0) return 1.0;
  check_timestep(t);
  return alpha_bar[t - 1];
}

void NoiseSchedule::check_timestep(std::size_t t) const {
  if (t < 1 || t > steps())
    throw InvalidInput("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
}

NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T == 0) throw InvalidInput("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw InvalidInput("need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.train_steps = T;
  double prod = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (T - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
    s.model_timestep.push_back(i + 1);
  }
  return s;
}

NoiseSchedule respace(const NoiseSchedule& base, std::size_t steps) {
  const std::size_t T = base.steps();
  if (steps == 0 || steps > T)
    throw InvalidInput("sampling steps " + std::to_string(steps) + " must be in [1, " + std::to_string(T) + "]");
  NoiseSchedule s;
  s.train_steps = base.train_steps;
  double prev_bar = 1.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const std::size_t t =
        steps == 1 ? T
                   : 1 + static_cast<std::size_t>(std::llround(static_cast<double>((k - 1) * (T - 1)) /
                                                               static_cast<double>(steps - 1)));
    const double bar = base.alpha_bar[t - 1];
    const double a = bar / prev_bar;
    s.alpha.push_back(a);
    s.beta.push_back(1.0 - a);
    s.alpha_bar.push_back(bar);
    s.model_timestep.push_back(base.model_timestep[t - 1]);
    prev_bar = bar;
  }
  return s;
}

double posterior_variance(const NoiseSchedule& s, std::size_t t) {
  s.check_timestep(t);
  return (1.0 - s.alpha_bar_at(t - 1)) / (1.0 - s.alpha_bar_at(t)) * s.beta[t - 1];
}

void ConditioningBundle::validate() const {
  if (!(seconds_total > 0.0) || !std::isfinite(seconds_total)) throw InvalidInput("seconds_total must be > 0");
  if (!std::isfinite(seconds_start)) throw InvalidInput("seconds_start must be finite");
  for (const auto* t : {semantic ? &*semantic : nullptr, control_latent ? &*control_latent : nullptr}) {
    if (!t) continue;
    for (double v : t->data())
      if (!std::isfinite(v)) throw InvalidInput("conditioning contains non-finite values");
  }
}

ad::Tensor q_sample(const ad::Tensor& z0, std::size_t t, const ad::Tensor& eps, const NoiseSchedule& s) {
  s.check_timestep(t);
  if (z0.shape() != eps.shape())
    throw ShapeError("q_sample: z0 " + ad::shape_str(z0.shape()) + " vs eps " + ad::shape_str(eps.shape()));
  const double bar = s.alpha_bar_at(t);
  return ad::add(ad::scale(z0, std::sqrt(bar)), ad::scale(eps, std::sqrt(1.0 - bar)));
}

ad::Tensor ddpm_loss_at(Denoiser& model, const ad::Tensor& z0, const ConditioningBundle& cond,
                        const NoiseSchedule& s, std::size_t t, const ad::Tensor& eps) {
  const ad::Tensor z_t = q_sample(z0, t, eps, s);
  return ad::mse_loss(model.predict_noise(z_t, s.model_timestep[t - 1], cond), eps);
}

ad::Tensor ddpm_loss(Denoiser& model, const ad::Tensor& z0, const ConditioningBundle& cond, const NoiseSchedule& s,
                     Rng& rng, double cfg_dropout) {
  const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(s.steps())));
  const ad::Tensor eps = ad::Tensor::randn(z0.shape(), rng);
  ConditioningBundle c = cond;
  if (cfg_dropout > 0.0 && rng.bernoulli(cfg_dropout)) c.drop_semantic = true;
  return ddpm_loss_at(model, z0, c, s, t, eps);
}

ad::Tensor cfg_combine(const ad::Tensor& eps_cond, const ad::Tensor& eps_uncond, double scale) {
  if (eps_cond.shape() != eps_uncond.shape())
    throw ShapeError("cfg_combine: " + ad::shape_str(eps_cond.shape()) + " vs " + ad::shape_str(eps_uncond.shape()));
  return ad::add(eps_uncond, ad::scale(ad::sub(eps_cond, eps_uncond), scale));
}

ad::Tensor guided_noise(Denoiser& model, const ad::Tensor& z_t, std::size_t model_t, const ConditioningBundle& cond,
                        double cfg_scale) {
  const ad::Tensor eps_cond = model.predict_noise(z_t, model_t, cond);
  if (cfg_scale == 1.0 || !cond.semantic || cond.drop_semantic) return eps_cond;
  ConditioningBundle null_cond = cond;
  null_cond.drop_semantic = true;
  return cfg_combine(eps_cond, model.predict_noise(z_t, model_t, null_cond), cfg_scale);
}

ad::Tensor posterior_mean(const ad::Tensor& z_t, const ad::Tensor& eps, const NoiseSchedule& s, std::size_t t) {
  s.check_timestep(t);
  const double a = s.alpha[t - 1], b = s.beta[t - 1], bar = s.alpha_bar_at(t);
  return ad::scale(ad::sub(z_t, ad::scale(eps, b / std::sqrt(1.0 - bar))), 1.0 / std::sqrt(a));
}

ad::Tensor predict_x0(const ad::Tensor& z_t, const ad::Tensor& eps, const NoiseSchedule& s, std::size_t t) {
  s.check_timestep(t);
  const double bar = s.alpha_bar_at(t);
  return ad::scale(ad::sub(z_t, ad::scale(eps, std::sqrt(1.0 - bar))), 1.0 / std::sqrt(bar));
}

ad::Tensor posterior_mean_from_x0(const ad::Tensor& z_t, const ad::Tensor& x0, const NoiseSchedule& s, std::size_t t) {
  s.check_timestep(t);
  const double a = s.alpha[t - 1], b = s.beta[t - 1], bar = s.alpha_bar_at(t);
  const double prev = t > 1 ? s.alpha_bar_at(t - 1) : 1.0;
  return ad::add(ad::scale(x0, std::sqrt(prev) * b / (1.0 - bar)), ad::scale(z_t, std::sqrt(a) * (1.0 - prev) / (1.0 - bar)));
}

ad::Tensor p_step(Denoiser& model, const ad::Tensor& z_t, std::size_t t, const ConditioningBundle& cond,
                  const NoiseSchedule& s, Rng& rng, double cfg_scale, double clip_x0) {
  s.check_timestep(t);
  const ad::Tensor eps = guided_noise(model, z_t, s.model_timestep[t - 1], cond, cfg_scale);
  ad::Tensor mean;
  if (clip_x0 > 0.0) {
    ad::Tensor x0 = predict_x0(z_t, eps, s, t).detach();
    for (double& v : x0.mutable_data()) v = std::clamp(v, -clip_x0, clip_x0);
    mean = posterior_mean_from_x0(z_t, x0, s, t);
  } else {
    mean = posterior_mean(z_t, eps, s, t);
  }
  if (t == 1) return mean;
  const double sigma = std::sqrt(posterior_variance(s, t));
  return ad::add(mean, ad::Tensor::randn(z_t.shape(), rng, sigma));
}

ad::Tensor sample(Denoiser& model, const ad::Shape& shape, const ConditioningBundle& cond, const NoiseSchedule& base,
                  std::size_t steps, double cfg_scale, Rng& rng, double clip_x0) {
  if (steps > base.steps())
    throw InvalidInput("steps " + std::to_string(steps) + " exceed schedule length " + std::to_string(base.steps()));
  cond.validate();
  const NoiseSchedule ladder = respace(base, steps);
  ad::NoGradGuard no_grad;
  ad::Tensor z = ad::Tensor::randn(shape, rng);
  for (std::size_t t = ladder.steps(); t >= 1; --t) z = p_step(model, z, t, cond, ladder, rng, cfg_scale, clip_x0);
  return z;
}

std::vector<double> fourier_features(double value, std::size_t dim, double max_period) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(value * freq);
    out[half + i] = std::cos(value * freq);
  }
  return out;
}

MlpDenoiser::MlpDenoiser(std::size_t data_dim, std::size_t hidden, std::size_t train_steps, Rng& rng)
    : train_steps_(train_steps),
      in_(data_dim + time_dim_, hidden, rng),
      mid_(hidden, hidden, rng),
      out_(hidden, data_dim, rng) {}

ad::Tensor MlpDenoiser::predict_noise(const ad::Tensor& z_t, std::size_t t, const ConditioningBundle&) {
  if (z_t.rank() != 2) throw ShapeError("MlpDenoiser expects [B, D], got " + ad::shape_str(z_t.shape()));
  const std::size_t batch = z_t.dim(0);
  // Timestep scaled so the lowest frequency spans the schedule.
  const auto feats = fourier_features(static_cast<double>(t) / static_cast<double>(train_steps_) * 1000.0, time_dim_);
  std::vector<double> tiled;
  tiled.reserve(batch * time_dim_);
  for (std::size_t b = 0; b < batch; ++b) tiled.insert(tiled.end(), feats.begin(), feats.end());
  const ad::Tensor temb = ad::Tensor::from_data({batch, time_dim_}, std::move(tiled));
  ad::Tensor h = ad::gelu(in_.forward(ad::concat({z_t, temb}, 1)));
  h = ad::gelu(mid_.forward(h));
  return out_.forward(h);
}

void MlpDenoiser::visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix) {
  in_.visit_parameters(fn, prefix + "in.");
  mid_.visit_parameters(fn, prefix + "mid.");
  out_.visit_parameters(fn, prefix + "out.");
}

}  // namespace foley::diffusion
