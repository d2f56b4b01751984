#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <nlohmann/json.hpp>
#include <vector>

#include "foley/ad/nn.hpp"
#include "foley/diffusion/diffusion.hpp"
#include "foley/rng.hpp"

namespace foley::dit {

struct DiTConfig {
  std::size_t layers = 6;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  double depth_factor = 0.2;
  std::size_t cross_attn_dim = 8;
  std::size_t latent_channels = 8;
  // Latent frames folded into one token.
  std::size_t patch = 5;
  std::size_t mlp_ratio = 2;
  std::size_t time_features = 32;

  std::size_t controlled_layers() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DiTConfig from_json(const nlohmann::json& j);
};

// Number of prepended conditioning tokens: timestep, seconds_start, seconds_total.
inline constexpr std::size_t kPrefixTokens = 3;

// Pre-norm transformer block: self-attention, cross-attention to the semantic
// tokens, MLP; each with a residual connection.
class DiTBlock : public ad::Module {
 public:
  DiTBlock() = default;
  DiTBlock(const DiTConfig& cfg, Rng& rng);

  ad::Tensor forward(const ad::Tensor& h, const ad::Tensor& context) const;
  void visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix = "") override;

 private:
  ad::LayerNorm ln1_, ln2_, ln3_;
  ad::MultiHeadAttention self_attn_, cross_attn_;
  ad::Linear fc1_, fc2_;
};

class DiTModel : public diffusion::Denoiser, public ad::Module {
 public:
  DiTModel(const DiTConfig& cfg, Rng& rng);

  const DiTConfig& config() const { return cfg_; }

  ad::Tensor predict_noise(const ad::Tensor& z_t, std::size_t t, const diffusion::ConditioningBundle& cond) override;

  // Building blocks shared with the controlled forward pass.
  // Patchified latent tokens with prefix tokens and positions: [prefix + L / patch, D].
  ad::Tensor embed(const ad::Tensor& z_t, std::size_t t, const diffusion::ConditioningBundle& cond) const;
  // Embeds with the prefix tokens in a caller-given order (indices into {t, start, total}).
  ad::Tensor embed_ordered(const ad::Tensor& z_t, std::size_t t, const diffusion::ConditioningBundle& cond,
                           const std::array<std::size_t, kPrefixTokens>& order) const;
  ad::Tensor context(const diffusion::ConditioningBundle& cond) const;
  ad::Tensor head(const ad::Tensor& h, std::size_t latent_frames) const;
  // [L, C] -> [L / patch, patch * C]
  ad::Tensor patchify(const ad::Tensor& z) const;

  const std::vector<DiTBlock>& blocks() const { return blocks_; }
  std::vector<DiTBlock>& blocks() { return blocks_; }

  void visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix = "") override;

 private:
  DiTConfig cfg_;
  ad::Linear in_proj_;
  ad::Linear t_fc1_, t_fc2_;
  ad::Linear start_proj_, total_proj_;
  std::vector<DiTBlock> blocks_;
  ad::LayerNorm final_norm_;
  ad::Linear out_proj_;
  ad::Tensor null_embedding_;  // [1, cross_attn_dim]
};

// Trainable copies of the first N base blocks bridged by zero-initialized
// projections.
class ControlNetBranch : public ad::Module {
 public:
  ControlNetBranch() = default;

  std::size_t size() const { return copies.size(); }
  void visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix = "") override;

  std::vector<ad::Linear> zero_in;   // patch * C -> D
  std::vector<DiTBlock> copies;
  std::vector<ad::Linear> zero_out;  // D -> D
};

// Freezes the base and creates a branch over its first ceil(depth_factor * layers) blocks.
std::unique_ptr<ControlNetBranch> attach_controlnet(DiTModel& base, double depth_factor);

// Base model plus branch; requires cond.control_latent.
class ControlledDiT : public diffusion::Denoiser {
 public:
  ControlledDiT(DiTModel& base, ControlNetBranch& branch) : base_(base), branch_(branch) {}

  ad::Tensor predict_noise(const ad::Tensor& z_t, std::size_t t, const diffusion::ConditioningBundle& cond) override;

 private:
  DiTModel& base_;
  ControlNetBranch& branch_;
};

}  // namespace foley::dit
