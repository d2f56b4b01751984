#include <doctest.h>

#include <cmath>

#include "foley/ad/ops.hpp"
#include "foley/dit/codec.hpp"
#include "foley/dit/dit.hpp"
#include "foley/dit/training.hpp"
#include "foley/error.hpp"
#include "support/gradcheck.hpp"

using namespace foley;
using namespace foley::dit;
using ad::Tensor;
using diffusion::ConditioningBundle;

namespace {

DiTConfig tiny_config() {
  DiTConfig c;
  c.layers = 2;
  c.model_dim = 8;
  c.heads = 2;
  c.cross_attn_dim = 4;
  c.latent_channels = 2;
  c.patch = 2;
  c.time_features = 8;
  c.depth_factor = 0.5;
  return c;
}

ConditioningBundle tiny_cond(Rng& rng, std::size_t cross = 4) {
  ConditioningBundle c;
  c.semantic = Tensor::randn({1, cross}, rng);
  c.seconds_start = 0.0;
  c.seconds_total = 2.0;
  return c;
}

// Gives every parameter random values so zero-initialized projections do not
// trivially hide differences.
void randomize(ad::Module& m, Rng& rng, double scale = 0.3) {
  for (auto& p : m.parameters())
    for (double& v : p.mutable_data()) v = rng.normal(0.0, scale);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("controlled layer count is ceil(depth_factor * layers)") {
  DiTConfig c;
  c.layers = 24;
  c.depth_factor = 0.2;
  CHECK(c.controlled_layers() == 5);
  c.layers = 6;
  CHECK(c.controlled_layers() == 2);
  c.depth_factor = 1.0;
  CHECK(c.controlled_layers() == 6);
  c.depth_factor = 0.5;
  CHECK(c.controlled_layers() == 3);
  c.depth_factor = 0.01;
  CHECK(c.controlled_layers() == 1);
  c.depth_factor = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c.depth_factor = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c.depth_factor = 0.2;
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), InvalidInput);

  auto j = tiny_config().to_json();
  auto back = DiTConfig::from_json(j);
  CHECK(back.to_json() == j);
}

TEST_CASE("DiT output shape matches its input") {
  Rng rng(1);
  DiTModel m(DiTConfig{}, rng);
  randomize(m, rng, 0.05);
  Tensor z = Tensor::randn({500, 8}, rng);
  auto cond = tiny_cond(rng, 8);
  auto out = m.predict_noise(z, 100, cond);
  CHECK(out.shape() == ad::Shape{500, 8});
  CHECK(m.embed(z, 100, cond).shape() == ad::Shape{100 + kPrefixTokens, 64});

  CHECK_THROWS_AS(m.predict_noise(Tensor::randn({503, 8}, rng), 1, cond), ShapeError);
  CHECK_THROWS_AS(m.predict_noise(Tensor::randn({500, 7}, rng), 1, cond), ShapeError);
  auto bad = cond;
  bad.semantic = Tensor::randn({1, 6}, rng);
  CHECK_THROWS_AS(m.predict_noise(z, 1, bad), ShapeError);
}

TEST_CASE("fresh DiT predicts zero noise") {
  Rng rng(2);
  DiTModel m(tiny_config(), rng);
  auto out = m.predict_noise(Tensor::randn({6, 2}, rng), 5, tiny_cond(rng));
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("prefix token order changes the embedding") {
  Rng rng(3);
  DiTModel m(tiny_config(), rng);
  Tensor z = Tensor::randn({6, 2}, rng);
  auto cond = tiny_cond(rng);
  auto a = m.embed_ordered(z, 10, cond, {0, 1, 2});
  auto b = m.embed_ordered(z, 10, cond, {2, 0, 1});
  CHECK(max_abs_diff(a, m.embed(z, 10, cond)) == 0.0);
  CHECK(max_abs_diff(a, b) > 1e-3);

  // Each conditioning scalar reaches the output.
  randomize(m, rng);
  auto base = m.predict_noise(z, 10, cond);
  auto c2 = cond;
  c2.seconds_start = 0.5;
  CHECK(max_abs_diff(base, m.predict_noise(z, 10, c2)) > 1e-6);
  c2 = cond;
  c2.seconds_total = 3.0;
  CHECK(max_abs_diff(base, m.predict_noise(z, 10, c2)) > 1e-6);
  CHECK(max_abs_diff(base, m.predict_noise(z, 11, cond)) > 1e-6);
  c2 = cond;
  c2.drop_semantic = true;
  CHECK(max_abs_diff(base, m.predict_noise(z, 10, c2)) > 1e-6);
}

TEST_CASE("DiT gradient check") {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    DiTModel m(tiny_config(), rng);
    randomize(m, rng);
    Tensor z = Tensor::randn({4, 2}, rng);
    auto cond = tiny_cond(rng);
    const double err = testing::gradcheck(
        [&](const std::vector<Tensor>&) { return testing::weighted_sum(m.predict_noise(z, 7, cond), seed); },
        m.parameters());
    CHECK(err < 1e-5);
  }
}

TEST_CASE("ControlNet branch starts as an identity on the base") {
  Rng rng(4);
  DiTConfig cfg = tiny_config();
  cfg.layers = 4;
  DiTModel base(cfg, rng);
  randomize(base, rng);
  Tensor z = Tensor::randn({6, 2}, rng);
  auto cond = tiny_cond(rng);
  cond.control_latent = Tensor::randn({6, 2}, rng);
  const Tensor plain = base.predict_noise(z, 20, cond);

  const std::uint64_t hash = ad::parameter_hash(base);
  auto branch = attach_controlnet(base, 0.5);
  CHECK(branch->size() == 2);
  for (auto& p : base.parameters()) CHECK_FALSE(p.requires_grad());
  for (auto& p : branch->parameters()) CHECK(p.requires_grad());

  ControlledDiT controlled(base, *branch);
  const Tensor out = controlled.predict_noise(z, 20, cond);
  CHECK(max_abs_diff(plain, out) < 1e-6);

  // Gradients reach the branch only.
  ad::backward(testing::weighted_sum(out, 1));
  for (auto& p : base.parameters())
    if (p.has_grad())
      for (double g : p.grad()) CHECK(g == 0.0);
  bool any = false;
  for (auto& [name, p] : branch->named_parameters())
    if (name.find("zero_out") != std::string::npos && p.has_grad())
      for (double g : p.grad()) any = any || g != 0.0;
  CHECK(any);
  CHECK(ad::parameter_hash(base) == hash);

  auto wrong = cond;
  wrong.control_latent = Tensor::randn({4, 2}, rng);
  CHECK_THROWS_AS(controlled.predict_noise(z, 20, wrong), ShapeError);
  auto none = cond;
  none.control_latent.reset();
  CHECK_THROWS_AS(controlled.predict_noise(z, 20, none), InvalidInput);
}

TEST_CASE("controlled forward gradient check on branch parameters") {
  Rng rng(5);
  DiTModel base(tiny_config(), rng);
  randomize(base, rng);
  auto branch = attach_controlnet(base, 1.0);
  randomize(*branch, rng);
  ControlledDiT controlled(base, *branch);
  Tensor z = Tensor::randn({4, 2}, rng);
  auto cond = tiny_cond(rng);
  cond.control_latent = Tensor::randn({4, 2}, rng);
  const double err = testing::gradcheck(
      [&](const std::vector<Tensor>&) { return testing::weighted_sum(controlled.predict_noise(z, 3, cond), 9); },
      branch->parameters());
  CHECK(err < 1e-5);
}

TEST_CASE("ControlNet training leaves the base untouched") {
  Rng rng(6);
  DiTModel base(tiny_config(), rng);
  randomize(base, rng, 0.1);
  std::vector<LatentExample> data;
  for (int i = 0; i < 4; ++i) {
    LatentExample ex;
    ex.latent = Tensor::randn({4, 2}, rng);
    ex.control = ad::scale(ex.latent, 0.5).detach();
    ex.semantic = Tensor::randn({1, 4}, rng);
    ex.seconds_total = 2.0;
    data.push_back(ex);
  }
  auto s = diffusion::make_linear_schedule(50);
  DiffusionTrainConfig cfg;
  cfg.steps = 5;
  cfg.batch = 2;
  cfg.lr = 1e-2;
  DiTModel fresh(tiny_config(), rng);
  auto unfrozen_branch = std::make_unique<ControlNetBranch>();
  CHECK_THROWS_AS(train_controlnet(fresh, *unfrozen_branch, data, s, cfg), InvalidInput);

  const std::uint64_t hash = ad::parameter_hash(base);
  auto branch = attach_controlnet(base, 0.5);
  const std::uint64_t branch_hash = ad::parameter_hash(*branch);
  auto report = train_controlnet(base, *branch, data, s, cfg);
  CHECK(report.losses.size() == 5);
  CHECK(ad::parameter_hash(base) == hash);
  CHECK(ad::parameter_hash(*branch) != branch_hash);
}

TEST_CASE("codec latent has ceil(samples / factor) frames") {
  Rng rng(7);
  LatentCodec codec(CodecConfig{}, rng);
  CHECK(codec.config().downsample_factor() == 16);
  CHECK(codec.encode(std::vector<double>(8000, 0.1)).shape() == ad::Shape{500, 8});
  CHECK(codec.encode(std::vector<double>(8001, 0.1)).shape() == ad::Shape{501, 8});
  CHECK(codec.latent_frames(17) == 2);
  auto w = codec.decode(codec.encode(std::vector<double>(1000, 0.2)), 1000, 4000);
  CHECK(w.num_frames() == 1000);
  CHECK(w.sample_rate == 4000);
  CHECK_THROWS_AS(codec.encode(std::vector<double>{}), InvalidInput);
}

TEST_CASE("codec learns to reconstruct tones") {
  Rng rng(8);
  std::vector<dsp::Waveform> clips;
  for (int i = 0; i < 8; ++i) {
    std::vector<double> y(2048);
    const double f = 220.0 * std::pow(2.0, i % 4);
    for (std::size_t n = 0; n < y.size(); ++n)
      y[n] = 0.8 * std::exp(-static_cast<double>(n) / 900.0) * std::sin(2.0 * M_PI * f * static_cast<double>(n) / 4000.0);
    clips.push_back(dsp::Waveform::mono(4000, y));
  }
  LatentCodec codec(CodecConfig{}, rng);
  CodecTrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 4;
  cfg.crop = 512;
  auto r = train_codec(codec, clips, cfg);
  CHECK(r.losses.back() < r.losses.front());
  CHECK(codec.latent_scale > 0.0);
  auto rec = codec.decode(codec.encode(clips[1]), 2048, 4000);
  const double snr = reconstruction_snr_db(clips[1].channels[0], rec.channels[0]);
  MESSAGE("codec snr " << snr << " dB");
  CHECK(snr > 10.0);
}

TEST_CASE("windowed_means") {
  CHECK(windowed_means({1, 2, 3, 4, 5}, 2) == std::vector<double>{1.5, 3.5});
  CHECK(windowed_means({1, 2}, 3).empty());
}
