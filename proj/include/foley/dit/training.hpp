#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "foley/diffusion/diffusion.hpp"
#include "foley/dit/dit.hpp"

namespace foley::dit {

// One training clip in latent space.
struct LatentExample {
  ad::Tensor latent;                 // [frames, C]
  ad::Tensor semantic;               // [1, cross_attn_dim]
  ad::Tensor control;                // [frames, C]; undefined when absent
  double seconds_start = 0.0;
  double seconds_total = 1.0;
};

struct DiffusionTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double cfg_dropout = 0.1;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  // Called after every step with the mean batch loss.
  std::function<void(std::size_t step, double loss)> on_step;
};

struct TrainReport {
  std::vector<double> losses;
};

diffusion::ConditioningBundle conditioning_for(const LatentExample& ex, bool with_control);

TrainReport train_base(DiTModel& model, const std::vector<LatentExample>& data, const diffusion::NoiseSchedule& s,
                       const DiffusionTrainConfig& cfg);

// Updates only the branch parameters; the base must already be frozen.
TrainReport train_controlnet(DiTModel& base, ControlNetBranch& branch, const std::vector<LatentExample>& data,
                             const diffusion::NoiseSchedule& s, const DiffusionTrainConfig& cfg);

// Mean of `values` over consecutive windows of `window` entries.
std::vector<double> windowed_means(const std::vector<double>& values, std::size_t window);

}  // namespace foley::dit
