#include "foley/ad/optim.hpp"

#include <cmath>

#include "foley/error.hpp"

namespace foley::ad {

void adam_step(OptimizerState& state, std::vector<Tensor>& params, const AdamConfig& config) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw InvalidInput("optimizer state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.requires_grad()) continue;
    auto value = p.mutable_data();
    const bool has_grad = p.has_grad();
    const auto& grad = p.node().grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != value.size()) throw InvalidInput("optimizer state does not match parameter shape");
    for (std::size_t j = 0; j < value.size(); ++j) {
      double g = has_grad ? grad[j] : 0.0;
      if (!config.decoupled) g += config.weight_decay * value[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config.eps);
      if (config.decoupled) value[j] -= config.lr * config.weight_decay * value[j];
      value[j] -= config.lr * update;
    }
  }
}

void sgd_step(std::vector<Tensor>& params, double lr) {
  for (auto& p : params) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto value = p.mutable_data();
    const auto& grad = p.node().grad;
    for (std::size_t j = 0; j < value.size(); ++j) value[j] -= lr * grad[j];
  }
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    if (p.has_grad())
      for (double g : p.node().grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.node().grad) g *= s;
  }
  return norm;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace foley::ad
