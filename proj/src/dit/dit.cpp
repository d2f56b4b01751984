#include "foley/dit/dit.hpp"

#include <cmath>

#include "foley/ad/ops.hpp"
#include "foley/error.hpp"

namespace foley::dit {

using ad::Tensor;
using diffusion::ConditioningBundle;

std::size_t DiTConfig::controlled_layers() const {
  const auto n = static_cast<std::size_t>(std::ceil(depth_factor * static_cast<double>(layers) - 1e-9));
  return std::clamp<std::size_t>(n, 1, layers);
}

void DiTConfig::validate() const {
  if (layers == 0) throw InvalidInput("DiT needs at least one layer");
  if (heads == 0 || model_dim % heads != 0) throw InvalidInput("model_dim must be divisible by heads");
  if (!(depth_factor > 0.0 && depth_factor <= 1.0)) throw InvalidInput("depth_factor must be in (0, 1]");
  if (patch == 0 || latent_channels == 0 || cross_attn_dim == 0) throw InvalidInput("DiT dims must be positive");
}

nlohmann::json DiTConfig::to_json() const {
  return {{"layers", layers},     {"model_dim", model_dim},           {"heads", heads},
          {"depth_factor", depth_factor}, {"cross_attn_dim", cross_attn_dim}, {"latent_channels", latent_channels},
          {"patch", patch},       {"mlp_ratio", mlp_ratio},           {"time_features", time_features}};
}

DiTConfig DiTConfig::from_json(const nlohmann::json& j) {
  DiTConfig c;
  c.layers = j.value("layers", c.layers);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.heads = j.value("heads", c.heads);
  c.depth_factor = j.value("depth_factor", c.depth_factor);
  c.cross_attn_dim = j.value("cross_attn_dim", c.cross_attn_dim);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.patch = j.value("patch", c.patch);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.time_features = j.value("time_features", c.time_features);
  c.validate();
  return c;
}

DiTBlock::DiTBlock(const DiTConfig& cfg, Rng& rng)
    : ln1_(cfg.model_dim),
      ln2_(cfg.model_dim),
      ln3_(cfg.model_dim),
      self_attn_(cfg.model_dim, cfg.heads, cfg.model_dim, rng),
      cross_attn_(cfg.model_dim, cfg.heads, cfg.cross_attn_dim, rng),
      fc1_(cfg.model_dim, cfg.model_dim * cfg.mlp_ratio, rng),
      fc2_(cfg.model_dim * cfg.mlp_ratio, cfg.model_dim, rng) {}

Tensor DiTBlock::forward(const Tensor& h, const Tensor& context) const {
  const Tensor n1 = ln1_.forward(h);
  Tensor x = ad::add(h, self_attn_.forward(n1, n1));
  x = ad::add(x, cross_attn_.forward(ln2_.forward(x), context));
  return ad::add(x, fc2_.forward(ad::gelu(fc1_.forward(ln3_.forward(x)))));
}

void DiTBlock::visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix) {
  ln1_.visit_parameters(fn, prefix + "ln1.");
  ln2_.visit_parameters(fn, prefix + "ln2.");
  ln3_.visit_parameters(fn, prefix + "ln3.");
  self_attn_.visit_parameters(fn, prefix + "self_attn.");
  cross_attn_.visit_parameters(fn, prefix + "cross_attn.");
  fc1_.visit_parameters(fn, prefix + "fc1.");
  fc2_.visit_parameters(fn, prefix + "fc2.");
}

namespace {

Tensor sinusoidal_positions(std::size_t tokens, std::size_t dim) {
  std::vector<double> data;
  data.reserve(tokens * dim);
  for (std::size_t p = 0; p < tokens; ++p) {
    const auto f = diffusion::fourier_features(static_cast<double>(p), dim, 10000.0);
    data.insert(data.end(), f.begin(), f.end());
  }
  return Tensor::from_data({tokens, dim}, std::move(data));
}

Tensor feature_row(double value, std::size_t dim, double max_period) {
  return Tensor::from_data({1, dim}, diffusion::fourier_features(value, dim, max_period));
}

}  // namespace

DiTModel::DiTModel(const DiTConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t token_in = cfg.patch * cfg.latent_channels;
  in_proj_ = ad::Linear(token_in, cfg.model_dim, rng);
  t_fc1_ = ad::Linear(cfg.time_features, cfg.model_dim, rng);
  t_fc2_ = ad::Linear(cfg.model_dim, cfg.model_dim, rng);
  start_proj_ = ad::Linear(cfg.time_features, cfg.model_dim, rng);
  total_proj_ = ad::Linear(cfg.time_features, cfg.model_dim, rng);
  for (std::size_t i = 0; i < cfg.layers; ++i) blocks_.emplace_back(cfg_, rng);
  final_norm_ = ad::LayerNorm(cfg.model_dim);
  out_proj_ = ad::Linear(cfg.model_dim, token_in, rng);
  out_proj_.zero_();
  null_embedding_ = Tensor::randn({1, cfg.cross_attn_dim}, rng, 0.1);
  null_embedding_.set_requires_grad(true);
}

Tensor DiTModel::patchify(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != cfg_.latent_channels)
    throw ShapeError("DiT expects a latent [frames, " + std::to_string(cfg_.latent_channels) + "], got " +
                     ad::shape_str(z.shape()));
  if (z.dim(0) % cfg_.patch != 0)
    throw ShapeError("latent frames " + std::to_string(z.dim(0)) + " not divisible by patch " +
                     std::to_string(cfg_.patch));
  return ad::reshape(z, {z.dim(0) / cfg_.patch, cfg_.patch * cfg_.latent_channels});
}

Tensor DiTModel::embed_ordered(const Tensor& z_t, std::size_t t, const ConditioningBundle& cond,
                               const std::array<std::size_t, kPrefixTokens>& order) const {
  const Tensor tokens = in_proj_.forward(patchify(z_t));
  const Tensor t_tok =
      t_fc2_.forward(ad::gelu(t_fc1_.forward(feature_row(static_cast<double>(t), cfg_.time_features, 10000.0))));
  const Tensor start_tok = start_proj_.forward(feature_row(cond.seconds_start, cfg_.time_features, 100.0));
  const Tensor total_tok = total_proj_.forward(feature_row(cond.seconds_total, cfg_.time_features, 100.0));
  const std::array<Tensor, kPrefixTokens> prefix{t_tok, start_tok, total_tok};
  std::vector<Tensor> parts;
  for (std::size_t i : order) parts.push_back(prefix.at(i));
  parts.push_back(tokens);
  const Tensor seq = ad::concat(parts, 0);
  return ad::add(seq, sinusoidal_positions(seq.dim(0), cfg_.model_dim));
}

Tensor DiTModel::embed(const Tensor& z_t, std::size_t t, const ConditioningBundle& cond) const {
  return embed_ordered(z_t, t, cond, {0, 1, 2});
}

Tensor DiTModel::context(const ConditioningBundle& cond) const {
  if (!cond.semantic || cond.drop_semantic) return null_embedding_;
  const Tensor& s = *cond.semantic;
  if (s.rank() != 2 || s.dim(1) != cfg_.cross_attn_dim)
    throw ShapeError("semantic embedding " + ad::shape_str(s.shape()) + " does not match cross-attention dim [*, " +
                     std::to_string(cfg_.cross_attn_dim) + "]");
  return s;
}

Tensor DiTModel::head(const Tensor& h, std::size_t latent_frames) const {
  const std::size_t n = h.dim(0);
  const Tensor body = ad::slice(h, 0, kPrefixTokens, n);
  const Tensor out = out_proj_.forward(final_norm_.forward(body));
  return ad::reshape(out, {latent_frames, cfg_.latent_channels});
}

Tensor DiTModel::predict_noise(const Tensor& z_t, std::size_t t, const ConditioningBundle& cond) {
  const Tensor ctx = context(cond);
  Tensor h = embed(z_t, t, cond);
  for (const auto& b : blocks_) h = b.forward(h, ctx);
  return head(h, z_t.dim(0));
}

void DiTModel::visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix) {
  in_proj_.visit_parameters(fn, prefix + "in_proj.");
  t_fc1_.visit_parameters(fn, prefix + "t_fc1.");
  t_fc2_.visit_parameters(fn, prefix + "t_fc2.");
  start_proj_.visit_parameters(fn, prefix + "start_proj.");
  total_proj_.visit_parameters(fn, prefix + "total_proj.");
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].visit_parameters(fn, prefix + "blocks." + std::to_string(i) + ".");
  final_norm_.visit_parameters(fn, prefix + "final_norm.");
  out_proj_.visit_parameters(fn, prefix + "out_proj.");
  fn(prefix + "null_embedding", null_embedding_);
}

void ControlNetBranch::visit_parameters(const ad::ParamVisitor& fn, const std::string& prefix) {
  for (std::size_t i = 0; i < copies.size(); ++i) {
    const std::string p = prefix + "layers." + std::to_string(i) + ".";
    zero_in[i].visit_parameters(fn, p + "zero_in.");
    copies[i].visit_parameters(fn, p + "copy.");
    zero_out[i].visit_parameters(fn, p + "zero_out.");
  }
}

std::unique_ptr<ControlNetBranch> attach_controlnet(DiTModel& base, double depth_factor) {
  DiTConfig cfg = base.config();
  cfg.depth_factor = depth_factor;
  cfg.validate();
  const std::size_t n = cfg.controlled_layers();
  base.set_trainable(false);

  auto branch = std::make_unique<ControlNetBranch>();
  Rng unused(0);
  for (std::size_t i = 0; i < n; ++i) {
    ad::Linear zin(cfg.patch * cfg.latent_channels, cfg.model_dim, unused);
    zin.zero_();
    ad::Linear zout(cfg.model_dim, cfg.model_dim, unused);
    zout.zero_();
    DiTBlock copy(cfg, unused);
    ad::copy_parameters(base.blocks()[i], copy);
    branch->zero_in.push_back(std::move(zin));
    branch->copies.push_back(std::move(copy));
    branch->zero_out.push_back(std::move(zout));
  }
  branch->set_trainable(true);
  return branch;
}

Tensor ControlledDiT::predict_noise(const Tensor& z_t, std::size_t t, const ConditioningBundle& cond) {
  if (!cond.control_latent) throw InvalidInput("controlled forward needs a control latent");
  const Tensor& ctrl = *cond.control_latent;
  if (ctrl.shape() != z_t.shape())
    throw ShapeError("control latent " + ad::shape_str(ctrl.shape()) + " does not match latent " +
                     ad::shape_str(z_t.shape()));
  const Tensor ctx = base_.context(cond);
  Tensor h = base_.embed(z_t, t, cond);
  const Tensor ctrl_tokens = base_.patchify(ctrl);
  const std::size_t dim = base_.config().model_dim;
  const Tensor prefix_zeros = Tensor::zeros({kPrefixTokens, dim});
  const auto& blocks = base_.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Tensor out = blocks[i].forward(h, ctx);
    if (i < branch_.size()) {
      const Tensor injected = ad::concat({prefix_zeros, branch_.zero_in[i].forward(ctrl_tokens)}, 0);
      const Tensor side = branch_.copies[i].forward(ad::add(h, injected), ctx);
      out = ad::add(out, branch_.zero_out[i].forward(side));
    }
    h = out;
  }
  return base_.head(h, z_t.dim(0));
}

}  // namespace foley::dit
