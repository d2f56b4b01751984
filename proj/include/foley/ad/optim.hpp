#pragma once

#include <cstddef>
#include <vector>

#include "foley/ad/tensor.hpp"

namespace foley::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Decoupled (AdamW) weight decay; otherwise decay is folded into the gradient.
  bool decoupled = true;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

// One Adam/AdamW update over `params` using their accumulated gradients.
// Parameters without a gradient are treated as having a zero gradient.
void adam_step(OptimizerState& state, std::vector<Tensor>& params, const AdamConfig& config);
void sgd_step(std::vector<Tensor>& params, double lr);

// Rescales gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {}

  void step() { adam_step(state_, params_, config_); }
  void zero_grad();
  double clip(double max_norm) { return clip_grad_norm(params_, max_norm); }

  AdamConfig& config() { return config_; }
  OptimizerState& state() { return state_; }
  std::vector<Tensor>& params() { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  OptimizerState state_;
};

}  // namespace foley::ad
