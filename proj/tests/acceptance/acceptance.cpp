// Acceptance gate: one PASS/FAIL line per criterion. Exit status is non-zero
// if any criterion fails.
#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "foley/ad/nn.hpp"
#include "foley/ad/ops.hpp"
#include "foley/ad/optim.hpp"
#include "foley/diffusion/diffusion.hpp"
#include "foley/dit/pipeline.hpp"
#include "foley/dsp/envelope.hpp"
#include "foley/error.hpp"
#include "foley/io/checkpoint.hpp"
#include "foley/io/envelope_json.hpp"
#include "foley/io/manifest.hpp"
#include "foley/io/tensor_file.hpp"
#include "foley/io/wav.hpp"
#include "foley/metrics/metrics.hpp"
#include "foley/predictor/predictor.hpp"
#include "foley/toybench/toybench.hpp"
#include "support/gradcheck.hpp"
#include "support/temp_dir.hpp"

using namespace foley;
using ad::Tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- 1

// Direct transcription of the windowed RMS sum, zero beyond the signal end.
std::vector<double> brute_rms(const std::vector<double>& y, std::size_t W, std::size_t h) {
  std::vector<double> r;
  for (std::size_t i = 0; i * h < y.size(); ++i) {
    double acc = 0.0;
    for (std::size_t t = i * h; t < i * h + W; ++t) acc += t < y.size() ? y[t] * y[t] : 0.0;
    r.push_back(std::sqrt(acc / static_cast<double>(W)));
  }
  return r;
}

void criterion_envelope_math(Outcome& o) {
  Rng rng(101);
  double worst = 0.0;
  bool counts_ok = true;
  for (int clip = 0; clip < 50; ++clip) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 20000));
    std::vector<double> y(n);
    for (double& v : y) v = rng.uniform(-1.0, 1.0);
    dsp::RmsConfig cfg;
    cfg.window = static_cast<std::size_t>(rng.uniform_int(16, 1024));
    cfg.hop = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(cfg.window)));
    const auto got = dsp::compute_rms(y, 16000, cfg);
    const auto want = brute_rms(y, cfg.window, cfg.hop);
    counts_ok = counts_ok && got.size() == want.size();
    for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i)
      worst = std::max(worst, std::abs(got.values[i] - want[i]));
  }
  const auto ten = dsp::compute_rms(std::vector<double>(160000, 0.25), 16000, dsp::RmsConfig{});
  o.detail << "max |rms - brute force| " << fmt(worst) << " over 50 clips; 10 s @ 16 kHz -> " << ten.size()
           << " frames";
  o.require(counts_ok, "frame counts");
  o.require(worst < 1e-9, "max diff < 1e-9");
  o.require(ten.size() == 1250, "1250 frames");
}

// ---------------------------------------------------------------- 2

void criterion_mu_law(Outcome& o) {
  dsp::RmsConfig cfg;  // 64 classes, mu = 63
  const std::size_t n = 10000;
  const double mu = 63.0, log_base = std::log1p(mu);
  // Bin edges from the companding formula, computed independently of the library.
  auto edge = [&](double k) { return std::expm1(k / 64.0 * log_base) / mu; };
  bool monotone = true, within = true;
  std::set<int> seen;
  int prev = -1;
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(i) / static_cast<double>(n - 1);
    dsp::Envelope e;
    e.values = {v};
    const int c = dsp::mu_law_compress(e, cfg).classes[0];
    monotone = monotone && c >= prev;
    prev = c;
    seen.insert(c);
    const double back = dsp::mu_law_expand(dsp::QuantizedEnvelope{{c}, 64, 1, 1}, cfg).values[0];
    const double width = edge(c + 1) - edge(c);
    worst_ratio = std::max(worst_ratio, std::abs(back - v) / width);
    within = within && std::abs(back - v) <= width;
  }
  const int expected_half = static_cast<int>(std::floor(64.0 * std::log1p(mu * 0.5) / log_base));
  const int got_half = dsp::mu_law_class(0.5, cfg);
  o.detail << "monotone " << monotone << ", classes hit " << seen.size() << "/64, worst round-trip error "
           << fmt(worst_ratio, 3) << " bin widths, v=0.5 -> " << got_half << " (formula " << expected_half << ")";
  o.require(monotone, "monotone");
  o.require(seen.size() == 64 && *seen.begin() == 0 && *seen.rbegin() == 63, "surjective onto 0..63");
  o.require(within, "round trip within one bin");
  o.require(got_half == 53 && expected_half == 53, "v=0.5 -> 53");
}

// ---------------------------------------------------------------- 3

void criterion_label_smoothing(Outcome& o) {
  const double sigma = 1.0;
  const std::size_t window = 3;
  dsp::QuantizedEnvelope q;
  q.num_classes = 64;
  q.classes = {0, 1, 2, 10, 32, 62, 63};
  const auto dist = dsp::gaussian_label_smooth(q, sigma, window);
  double worst = 0.0;
  bool one_hot = true;
  for (std::size_t f = 0; f < q.classes.size(); ++f) {
    const int gt = q.classes[f];
    std::vector<double> want(64, 0.0);
    if (gt == 0) {
      want[0] = 1.0;
    } else {
      double total = 0.0;
      for (int c = 1; c < 64; ++c) {
        if (std::abs(c - gt) > static_cast<int>(window)) continue;
        want[c] = std::exp(-static_cast<double>((c - gt) * (c - gt)) / (2.0 * sigma * sigma));
        total += want[c];
      }
      for (double& w : want) w /= total;
    }
    const auto row = dist.frame(f);
    for (int c = 0; c < 64; ++c) worst = std::max(worst, std::abs(row[c] - want[c]));
    if (gt == 0)
      for (int c = 0; c < 64; ++c) one_hot = one_hot && row[c] == (c == 0 ? 1.0 : 0.0);
  }
  // Interior row by hand: exp(-d^2/2) for d = 0..3, normalized.
  const double e1 = std::exp(-0.5), e2 = std::exp(-2.0), e3 = std::exp(-4.5);
  const double z = 1.0 + 2.0 * (e1 + e2 + e3);
  const auto row = dist.frame(4);
  const double hand = std::max({std::abs(row[32] - 1.0 / z), std::abs(row[31] - e1 / z), std::abs(row[34] - e2 / z),
                                std::abs(row[29] - e3 / z), std::abs(row[28])});
  o.detail << "max |weight - oracle| " << fmt(worst) << ", hand-computed row error " << fmt(hand)
           << ", class-0 one-hot " << one_hot;
  o.require(worst < 1e-6 && hand < 1e-6, "weights within 1e-6");
  o.require(one_hot, "class 0 one-hot");
}

// ---------------------------------------------------------------- 4

void criterion_gradients(Outcome& o) {
  using testing::gradcheck;
  using testing::weighted_sum;
  Rng rng(404);
  auto r = [&](ad::Shape s, double sc = 1.0) { return Tensor::randn(std::move(s), rng, sc); };
  using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
  struct Check {
    std::string name;
    Fn f;
    std::vector<Tensor> inputs;
  };
  auto ws = [](std::uint64_t seed, Fn inner) -> Fn {
    return [seed, inner](const std::vector<Tensor>& in) { return weighted_sum(inner(in), seed); };
  };
  ad::BatchNormStats bn_stats;
  std::vector<Check> checks = {
      {"add", ws(1, [](auto& in) { return ad::add(in[0], in[1]); }), {r({3, 4}), r({4})}},
      {"sub", ws(2, [](auto& in) { return ad::sub(in[0], in[1]); }), {r({3, 4}), r({3, 4})}},
      {"mul", ws(3, [](auto& in) { return ad::mul(in[0], in[1]); }), {r({3, 4}), r({4})}},
      {"scale", ws(4, [](auto& in) { return ad::scale(in[0], -1.7); }), {r({5})}},
      {"add_scalar", ws(5, [](auto& in) { return ad::add_scalar(in[0], 0.3); }), {r({5})}},
      {"square", ws(6, [](auto& in) { return ad::square(in[0]); }), {r({2, 3})}},
      {"matmul", ws(7, [](auto& in) { return ad::matmul(in[0], in[1]); }), {r({3, 4}), r({4, 2})}},
      {"matmul^T", ws(8, [](auto& in) { return ad::matmul(in[0], in[1], true); }), {r({3, 4}), r({5, 4})}},
      {"linear", ws(9, [](auto& in) { return ad::linear(in[0], in[1], in[2]); }), {r({2, 3, 4}), r({5, 4}), r({5})}},
      {"conv1d", ws(10, [](auto& in) { return ad::conv1d(in[0], in[1], in[2], 2, 1); }),
       {r({2, 3, 9}), r({4, 3, 3}), r({4})}},
      {"conv_transpose1d", ws(11, [](auto& in) { return ad::conv_transpose1d(in[0], in[1], in[2], 2); }),
       {r({2, 3, 5}), r({3, 2, 4}), r({2})}},
      {"relu", ws(12, [](auto& in) { return ad::relu(in[0]); }), {r({4, 4})}},
      {"sigmoid", ws(13, [](auto& in) { return ad::sigmoid(in[0]); }), {r({4, 4})}},
      {"tanh", ws(14, [](auto& in) { return ad::tanh(in[0]); }), {r({4, 4})}},
      {"gelu", ws(15, [](auto& in) { return ad::gelu(in[0]); }), {r({4, 4})}},
      {"softmax", ws(16, [](auto& in) { return ad::softmax(in[0]); }), {r({3, 5})}},
      {"log_softmax", ws(17, [](auto& in) { return ad::log_softmax(in[0]); }), {r({3, 5})}},
      {"layer_norm", ws(18, [](auto& in) { return ad::layer_norm(in[0], in[1], in[2]); }),
       {r({3, 6}), r({6}), r({6})}},
      {"batch_norm", ws(19, [&bn_stats](auto& in) { return ad::batch_norm(in[0], in[1], in[2], bn_stats, true); }),
       {r({4, 3, 5}), r({3}), r({3})}},
      {"embedding", ws(20, [](auto& in) { return ad::embedding(in[0], {2, 0, 2, 1}); }), {r({3, 4})}},
      {"concat", ws(21, [](auto& in) { return ad::concat({in[0], in[1]}, 1); }), {r({2, 3}), r({2, 2})}},
      {"slice", ws(22, [](auto& in) { return ad::slice(in[0], 1, 1, 3); }), {r({2, 4})}},
      {"select", ws(23, [](auto& in) { return ad::select(in[0], 0, 1); }), {r({3, 4})}},
      {"stack", ws(24, [](auto& in) { return ad::stack({in[0], in[1]}, 1); }), {r({2, 3}), r({2, 3})}},
      {"reshape", ws(25, [](auto& in) { return ad::reshape(in[0], {3, 4}); }), {r({2, 6})}},
      {"transpose", ws(26, [](auto& in) { return ad::transpose(in[0], 0, 2); }), {r({2, 3, 4})}},
      {"sum", [](auto& in) { return ad::sum(in[0]); }, {r({3, 3})}},
      {"mean", [](auto& in) { return ad::mean(in[0]); }, {r({3, 3})}},
      {"upsample_nearest", ws(27, [](auto& in) { return ad::upsample_nearest(in[0], 11); }), {r({2, 2, 4})}},
      {"upsample_linear", ws(28, [](auto& in) { return ad::upsample_linear(in[0], 11); }), {r({2, 2, 4})}},
      {"attention", ws(29, [](auto& in) { return ad::attention(in[0], in[1], in[2], 2); }),
       {r({3, 4}), r({5, 4}), r({5, 4})}},
      {"dropout", ws(30,
                     [](auto& in) {
                       Rng mask(77);
                       return ad::dropout(in[0], 0.3, mask, true);
                     }),
       {r({4, 5})}},
      {"mse_loss", [](auto& in) { return ad::mse_loss(in[0], in[1]); }, {r({3, 4}), r({3, 4})}},
      {"soft_cross_entropy", [](auto& in) { return ad::soft_cross_entropy(in[0], in[1]); },
       {r({3, 5}), ad::softmax(r({3, 5})).detach()}},
  };

  Rng mrng(5);
  ad::BiLstm lstm(3, 4, 2, mrng);
  for (auto& p : lstm.parameters())
    for (double& v : p.mutable_data()) v = mrng.normal(0.0, 0.4);
  {
    auto params = lstm.parameters();
    std::vector<Tensor> inputs{r({2, 5, 3})};
    inputs.insert(inputs.end(), params.begin(), params.end());
    checks.push_back({"bi-lstm (2 layers, input + weights)",
                      ws(32, [&lstm](auto& in) { return lstm.forward(in[0]); }), inputs});
  }

  dit::DiTConfig dc;
  dc.model_dim = 8;
  dc.heads = 2;
  dc.cross_attn_dim = 3;
  dit::DiTBlock block(dc, mrng);
  for (auto& p : block.parameters())
    for (double& v : p.mutable_data()) v = mrng.normal(0.0, 0.3);
  {
    auto params = block.parameters();
    std::vector<Tensor> inputs{r({5, 8}), r({2, 3})};
    inputs.insert(inputs.end(), params.begin(), params.end());
    checks.push_back({"dit block (hidden, context, weights)",
                      ws(33, [&block](auto& in) { return block.forward(in[0], in[1]); }), inputs});
  }

  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failed;
  const auto t0 = std::chrono::steady_clock::now();
  for (auto& c : checks) {
    const double err = gradcheck(c.f, c.inputs);
    if (err > worst) {
      worst = err;
      worst_name = c.name;
    }
    if (!(err < 1e-4)) failed.push_back(c.name + "=" + fmt(err, 3));
  }
  const double secs = seconds_since(t0);
  o.detail << checks.size() << " checks, worst relative error " << fmt(worst, 3) << " (" << worst_name << "), "
           << fmt(secs, 3) << " s";
  for (const auto& f : failed) o.require(false, f);
  o.require(secs < 300.0, "runtime < 5 min");
}

// ---------------------------------------------------------------- 5

void criterion_diffusion(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = diffusion::make_linear_schedule(1000, 1e-4, 0.02);
  Rng rng(505);
  double worst_var = 0.0;
  for (std::size_t t : {1ul, 10ul, 100ul, 500ul, 1000ul}) {
    const std::size_t n = 100000;
    const Tensor z0 = Tensor::zeros({n});
    const Tensor eps = Tensor::randn({n}, rng);
    const Tensor zt = diffusion::q_sample(z0, t, eps, s);
    double m = 0.0, v = 0.0;
    for (double x : zt.data()) m += x;
    m /= static_cast<double>(n);
    for (double x : zt.data()) v += (x - m) * (x - m);
    v /= static_cast<double>(n - 1);
    const double target = 1.0 - s.alpha_bar_at(t);
    worst_var = std::max(worst_var, std::abs(v - target) / target);
  }

  // Learn N(3, 0.5^2) with a small MLP denoiser, then sample 2000 points.
  Rng trng(2024);
  diffusion::MlpDenoiser model(1, 64, 1000, trng);
  ad::AdamConfig cfg;
  cfg.lr = 2e-3;
  ad::Adam opt(model.parameters(), cfg);
  for (int step = 0; step < 3000; ++step) {
    Tensor z0 = Tensor::randn({128, 1}, trng, 0.5);
    for (double& v : z0.mutable_data()) v += 3.0;
    opt.zero_grad();
    ad::backward(diffusion::ddpm_loss(model, z0, {}, s, trng, 0.0));
    opt.step();
  }
  Rng srng(99);
  const auto z = diffusion::sample(model, {2000, 1}, {}, s, 1000, 1.0, srng);
  double m = 0.0, v = 0.0;
  for (double x : z.data()) m += x;
  m /= 2000.0;
  for (double x : z.data()) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / 1999.0);
  const double secs = seconds_since(t0);
  o.detail << "worst q_sample variance error " << fmt(100.0 * worst_var, 3) << "%; toy samples mean " << fmt(m)
           << " (target 3), std " << fmt(sd) << " (target 0.5); " << fmt(secs, 3) << " s";
  o.require(worst_var < 0.02, "variance within 2%");
  o.require(std::abs(m - 3.0) / 3.0 < 0.10, "mean within 10%");
  o.require(std::abs(sd - 0.5) / 0.5 < 0.15, "std within 15%");
  o.require(secs < 600.0, "runtime < 10 min");
}

// ---------------------------------------------------------------- toybench experiment (6, 7, 8, 11)

struct ToyExperimentConfig {
  std::size_t train_clips = 512;
  std::size_t eval_clips = 100;
  std::size_t codec_steps = 1500;
  std::size_t base_steps = 6000;
  double base_lr = 1e-3;
  std::size_t controlnet_steps = 5000;
  double controlnet_lr = 1e-3;
  double beta_end = 0.01;
  double cfg_scale = 4.0;
  std::size_t sampling_steps = 150;
};

struct ToyExperiment {
  ToyExperimentConfig cfg;
  toybench::ToySpec spec;
  dit::FoleyModel model;
  std::vector<toybench::ToyClip> eval;
  double training_seconds = 0.0;
  double codec_snr_db = 0.0;

  // Criterion 6 evidence.
  double identity_max_diff = 0.0;
  bool base_hash_unchanged = false;
  std::vector<double> controlnet_windows;
  double zero_control_effect = 0.0;

  // Criteria 7 and 8.
  double e_l1_controlled = 0.0, e_l1_unconditional = 0.0;
  std::size_t class_hits = 0;
  double generation_seconds = 0.0;
};

std::unique_ptr<ToyExperiment> run_toy_experiment(const ToyExperimentConfig& cfg) {
  auto ex = std::make_unique<ToyExperiment>();
  ex->cfg = cfg;
  ex->spec.seed = 11;
  auto& m = ex->model;
  const auto train = toybench::gen_dataset(ex->spec, cfg.train_clips);
  // Held-out clips with at least one event, so every target has audible content.
  for (std::uint64_t i = 0; ex->eval.size() < cfg.eval_clips; ++i) {
    auto clip = toybench::gen_dataset(ex->spec, 1, (1ull << 20) + i).front();
    if (!clip.events.empty()) ex->eval.push_back(std::move(clip));
  }

  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(5);
  m.codec = std::make_unique<dit::LatentCodec>(dit::CodecConfig{}, rng);
  std::vector<dsp::Waveform> waves;
  for (const auto& c : train) waves.push_back(c.waveform);
  dit::CodecTrainConfig cc;
  cc.steps = cfg.codec_steps;
  cc.seed = 1;
  dit::train_codec(*m.codec, waves, cc);
  std::fprintf(stderr, "  codec trained (%.0f s)\n", seconds_since(t0));

  m.schedule_config.beta_end = cfg.beta_end;
  m.schedule = m.schedule_config.build();
  m.semantic_table = toybench::class_embedding_table(ex->spec);
  m.rms = ex->spec.rms;
  m.base = std::make_unique<dit::DiTModel>(dit::DiTConfig{}, rng);
  std::vector<dit::LatentExample> data;
  for (const auto& c : train)
    data.push_back(dit::latent_example(m, c.waveform, c.envelope, toybench::class_embedding(ex->spec, c.timbre)));
  m.latent_clip = dit::max_abs_latent(data);
  dit::DiffusionTrainConfig bc;
  bc.steps = cfg.base_steps;
  bc.lr = cfg.base_lr;
  bc.seed = 2;
  dit::train_base(*m.base, data, m.schedule, bc);
  std::fprintf(stderr, "  base trained (%.0f s)\n", seconds_since(t0));

  // Zero-init identity: a fresh branch must not change generation for any control.
  m.controlnet = dit::attach_controlnet(*m.base, 0.2);
  const auto base_hash = ad::parameter_hash(*m.base);
  {
    Rng crng(66);
    for (int trial = 0; trial < 3; ++trial) {
      dsp::Envelope control;
      control.values.resize(250);
      for (double& v : control.values) v = crng.uniform();
      dit::GenerateRequest req;
      req.semantic = m.semantic_for_class(trial % 4);
      req.steps = 20;
      req.cfg_scale = cfg.cfg_scale;
      req.seed = 900 + static_cast<std::uint64_t>(trial);
      const auto plain = dit::generate(m, req);
      req.envelope = control;
      const auto controlled = dit::generate(m, req);
      for (std::size_t i = 0; i < plain.num_frames(); ++i)
        ex->identity_max_diff =
            std::max(ex->identity_max_diff, std::abs(plain.channels[0][i] - controlled.channels[0][i]));
    }
  }

  dit::DiffusionTrainConfig nc;
  nc.steps = cfg.controlnet_steps;
  nc.lr = cfg.controlnet_lr;
  nc.seed = 3;
  const auto report = dit::train_controlnet(*m.base, *m.controlnet, data, m.schedule, nc);
  ex->controlnet_windows = dit::windowed_means(report.losses, 100);
  ex->base_hash_unchanged = ad::parameter_hash(*m.base) == base_hash;
  ex->training_seconds = seconds_since(t0);
  std::fprintf(stderr, "  controlnet trained (%.0f s)\n", ex->training_seconds);

  // Codec quality on held-out audio.
  double snr = 0.0;
  for (const auto& c : ex->eval) {
    const auto rec = m.codec->decode(m.codec->encode(c.waveform), c.waveform.num_frames(), c.waveform.sample_rate);
    snr += dit::reconstruction_snr_db(c.waveform.channels[0], rec.channels[0]);
  }
  ex->codec_snr_db = snr / static_cast<double>(ex->eval.size());

  // A zero envelope must now steer generation away from the base output.
  {
    dit::GenerateRequest req;
    req.semantic = m.semantic_for_class(1);
    req.steps = 20;
    req.cfg_scale = cfg.cfg_scale;
    req.seed = 31;
    const auto plain = dit::generate(m, req);
    dsp::Envelope zero;
    zero.values.assign(250, 0.0);
    req.envelope = zero;
    const auto controlled = dit::generate(m, req);
    for (std::size_t i = 0; i < plain.num_frames(); ++i)
      ex->zero_control_effect =
          std::max(ex->zero_control_effect, std::abs(plain.channels[0][i] - controlled.channels[0][i]));
  }

  const auto t2 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < ex->eval.size(); ++i) {
    const auto& c = ex->eval[i];
    dit::GenerateRequest req;
    req.semantic = m.semantic_for_class(c.timbre);
    req.steps = cfg.sampling_steps;
    req.cfg_scale = cfg.cfg_scale;
    req.seed = 10000 + i;
    const auto unconditional = dit::generate(m, req);
    req.envelope = c.envelope;
    const auto controlled = dit::generate(m, req);
    ex->e_l1_controlled += metrics::e_l1(dsp::compute_rms(controlled, m.rms), c.envelope);
    ex->e_l1_unconditional += metrics::e_l1(dsp::compute_rms(unconditional, m.rms), c.envelope);
    ex->class_hits += toybench::dominant_class(ex->spec, controlled.channels[0]) == c.timbre;
  }
  ex->e_l1_controlled /= static_cast<double>(ex->eval.size());
  ex->e_l1_unconditional /= static_cast<double>(ex->eval.size());
  ex->generation_seconds = seconds_since(t2);
  std::fprintf(stderr, "  %zu evaluation pairs generated (%.0f s)\n", ex->eval.size(), ex->generation_seconds);
  return ex;
}

void criterion_controlnet_identity(Outcome& o, ToyExperiment& ex) {
  const auto& w = ex.controlnet_windows;
  const bool decreasing = w.size() >= 2 && w.back() < w.front();
  o.detail << "fresh branch vs base generation max |diff| " << fmt(ex.identity_max_diff, 3)
           << ", base hash unchanged " << ex.base_hash_unchanged << ", branch loss (100-step windows) "
           << fmt(w.empty() ? 0.0 : w.front()) << " -> " << fmt(w.empty() ? 0.0 : w.back())
           << ", trained zero-control effect " << fmt(ex.zero_control_effect, 3);
  o.require(ex.identity_max_diff <= 1e-6, "identity within 1e-6");
  o.require(ex.base_hash_unchanged, "base parameters bit-unchanged");
  o.require(decreasing, "branch loss decreases");
  o.require(ex.zero_control_effect > 1e-3, "trained branch responds to control");
}

void criterion_temporal_control(Outcome& o, ToyExperiment& ex) {
  const double improvement = 1.0 - ex.e_l1_controlled / ex.e_l1_unconditional;
  o.detail << "E-L1 controlled " << fmt(ex.e_l1_controlled) << " vs unconditional " << fmt(ex.e_l1_unconditional)
           << " (" << fmt(100.0 * improvement, 3) << "% lower) over " << ex.eval.size()
           << " held-out envelopes; training " << fmt(ex.training_seconds / 60.0, 3) << " min; codec held-out SNR "
           << fmt(ex.codec_snr_db, 3) << " dB";
  o.require(ex.e_l1_controlled < 0.05, "E-L1 < 0.05");
  o.require(improvement >= 0.5, ">= 50% better than unconditional");
  o.require(ex.training_seconds <= 30.0 * 60.0, "training <= 30 min");
  o.require(ex.codec_snr_db >= 15.0, "codec SNR >= 15 dB");
}

void criterion_semantic_control(Outcome& o, ToyExperiment& ex) {
  const double acc = static_cast<double>(ex.class_hits) / static_cast<double>(ex.eval.size());
  o.detail << "dominant-frequency class matches the requested embedding in " << ex.class_hits << "/"
           << ex.eval.size() << " generations (cfg " << ex.cfg.cfg_scale << ", " << ex.cfg.sampling_steps
           << " steps)";
  o.require(ex.eval.size() >= 100, "100 generations");
  o.require(acc >= 0.9, ">= 90%");
}

// ---------------------------------------------------------------- 9

void criterion_predictor(Outcome& o) {
  toybench::ToySpec spec;
  spec.seed = 1;
  const auto train_clips = toybench::gen_dataset(spec, 512);
  const auto val_clips = toybench::gen_dataset(spec, 64, 1000000);
  const auto test_clips = toybench::gen_dataset(spec, 128, 2000000);

  auto run = [&](predictor::Head head, double& seconds) {
    predictor::PredictorConfig cfg;
    cfg.head = head;
    std::vector<predictor::PredictorExample> tr, va, te;
    for (const auto& c : train_clips) tr.push_back(predictor::make_example(c.features, c.smoothed, cfg, spec.rms));
    for (const auto& c : val_clips) va.push_back(predictor::make_example(c.features, c.smoothed, cfg, spec.rms));
    for (const auto& c : test_clips) te.push_back(predictor::make_example(c.features, c.smoothed, cfg, spec.rms));
    Rng rng(3);
    predictor::EnvelopePredictor model(cfg, rng);
    predictor::PredictorTrainConfig tc;
    tc.epochs = 20;
    tc.seed = 4;
    const auto t0 = std::chrono::steady_clock::now();
    predictor::train_predictor(model, tr, va, tc, spec.rms);
    seconds = seconds_since(t0);
    return predictor::evaluate(model, te, spec.rms);
  };
  double cls_secs = 0.0, reg_secs = 0.0;
  const auto cls = run(predictor::Head::classification, cls_secs);
  std::fprintf(stderr, "  classifier trained (%.0f s)\n", cls_secs);
  const auto reg = run(predictor::Head::regression, reg_secs);
  std::fprintf(stderr, "  regression baseline trained (%.0f s)\n", reg_secs);
  const double ratio = reg.e_l1 / cls.e_l1;
  o.detail << "classifier held-out acc@5 " << fmt(cls.acc5, 3) << ", E-L1 " << fmt(cls.e_l1) << " ("
           << fmt(cls_secs / 60.0, 3) << " min); regression baseline E-L1 " << fmt(reg.e_l1) << ", acc@5 "
           << fmt(reg.acc5, 3) << "; baseline/classifier E-L1 ratio " << fmt(ratio, 3);
  o.require(cls.acc5 >= 0.8, "acc@5 >= 0.8");
  o.require(cls.e_l1 <= 0.02, "E-L1 <= 0.02");
  o.require(ratio >= 2.0, "baseline E-L1 >= 2x classifier");
  o.require(cls_secs <= 15.0 * 60.0, "training <= 15 min");
}

// ---------------------------------------------------------------- 10

metrics::EmbeddingSet gaussian_set(Rng& rng, const Eigen::VectorXd& mu, const Eigen::MatrixXd& chol, std::size_t n) {
  metrics::EmbeddingSet s{Eigen::MatrixXd(static_cast<Eigen::Index>(n), mu.size())};
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::VectorXd z(mu.size());
    for (Eigen::Index d = 0; d < mu.size(); ++d) z(d) = rng.normal();
    s.vectors.row(static_cast<Eigen::Index>(i)) = (mu + chol * z).transpose();
  }
  return s;
}

void criterion_metrics(Outcome& o) {
  Rng rng(1010);
  // 1-D sets with exactly chosen sample moments.
  auto moment_matched = [&](double mean, double sd, std::size_t n) {
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal();
    double m = 0.0, s = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(n);
    for (double v : x) s += (v - m) * (v - m);
    s = std::sqrt(s / static_cast<double>(n - 1));
    metrics::EmbeddingSet e{Eigen::MatrixXd(static_cast<Eigen::Index>(n), 1)};
    for (std::size_t i = 0; i < n; ++i) e.vectors(static_cast<Eigen::Index>(i), 0) = mean + sd * (x[i] - m) / s;
    return e;
  };
  double worst_1d = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double m1 = rng.uniform(-3, 3), s1 = rng.uniform(0.1, 2), m2 = rng.uniform(-3, 3), s2 = rng.uniform(0.1, 2);
    const double closed = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
    const double got = metrics::frechet_distance(moment_matched(m1, s1, 200), moment_matched(m2, s2, 300));
    worst_1d = std::max(worst_1d, std::abs(got - closed) / std::max(1.0, closed));
  }

  // 4-D Gaussians: analytic value from the population parameters.
  const int d = 4;
  Eigen::VectorXd mu_a(d), mu_b(d);
  mu_a << 0.0, 1.0, -0.5, 2.0;
  mu_b << 0.5, 0.0, 0.5, 1.0;
  Eigen::MatrixXd la = Eigen::MatrixXd::Zero(d, d), lb = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) {
      la(i, j) = i == j ? 1.0 + 0.2 * i : 0.3;
      lb(i, j) = i == j ? 0.8 : -0.2 * (i - j);
    }
  const Eigen::MatrixXd ca = la * la.transpose(), cb = lb * lb.transpose();
  // Tr((A^1/2 B A^1/2)^1/2) through an eigen-decomposition, independent of the library helper.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(ca);
  const Eigen::MatrixXd ra = ea.eigenvectors() * ea.eigenvalues().cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(ra * cb * ra);
  const double analytic =
      (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * ec.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double sampled = metrics::frechet_distance(gaussian_set(rng, mu_a, la, 50000), gaussian_set(rng, mu_b, lb, 50000));
  const double rel = std::abs(sampled - analytic) / analytic;

  // acc@k monotone in k; e_l1 symmetric and satisfies the triangle inequality.
  bool monotone = true, symmetric = true, triangle = true;
  for (int trial = 0; trial < 200; ++trial) {
    dsp::QuantizedEnvelope a, b;
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 60));
    for (std::size_t i = 0; i < n; ++i) {
      a.classes.push_back(static_cast<int>(rng.uniform_int(0, 63)));
      b.classes.push_back(static_cast<int>(rng.uniform_int(0, 63)));
    }
    double prev = -1.0;
    for (int k = 1; k <= 64; ++k) {
      const double acc = metrics::acc_at_k(a, b, k);
      monotone = monotone && acc >= prev;
      prev = acc;
    }
    std::vector<double> x(n), y(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform();
      y[i] = rng.uniform();
      z[i] = rng.uniform();
    }
    symmetric = symmetric && metrics::e_l1(x, y) == metrics::e_l1(y, x);
    triangle = triangle && metrics::e_l1(x, z) <= metrics::e_l1(x, y) + metrics::e_l1(y, z) + 1e-12;
  }
  o.detail << "1-D closed-form error " << fmt(worst_1d, 3) << ", 4-D sampled " << fmt(sampled) << " vs analytic "
           << fmt(analytic) << " (" << fmt(100.0 * rel, 3) << "%), acc@k monotone " << monotone
           << ", e_l1 symmetric " << symmetric << ", triangle " << triangle;
  o.require(worst_1d < 1e-9, "1-D closed form exact");
  o.require(rel < 0.02, "multivariate within 2%");
  o.require(monotone && symmetric && triangle, "acc@k / e_l1 properties");
}

// ---------------------------------------------------------------- 11

std::size_t fuzz_formats(Rng& rng, const std::filesystem::path& dir, std::vector<std::string>& failures) {
  std::size_t cases = 0;
  auto fail = [&](const std::string& what, int i) { failures.push_back(what + " #" + std::to_string(i)); };
  for (int i = 0; i < 100; ++i, ++cases) {
    // WAV float-32: values representable in f32 round-trip bit-exactly.
    const auto channels = static_cast<std::size_t>(rng.uniform_int(1, 2));
    const auto n = static_cast<std::size_t>(rng.uniform_int(0, 3000));
    dsp::Waveform w;
    w.sample_rate = static_cast<std::size_t>(rng.uniform_int(1000, 96000));
    w.channels.assign(channels, std::vector<double>(n));
    for (auto& ch : w.channels)
      for (double& v : ch) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const auto back = io::decode_wav(io::encode_wav(w, io::WavEncoding::float32));
    if (back.sample_rate != w.sample_rate || back.channels != w.channels) fail("wav f32", i);
  }
  for (int i = 0; i < 100; ++i, ++cases) {
    // WAV PCM-16: values on the 1/32768 grid are exact.
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 3000));
    std::vector<double> s(n);
    for (double& v : s) v = static_cast<double>(rng.uniform_int(-32768, 32767)) / 32768.0;
    const auto w = dsp::Waveform::mono(static_cast<std::size_t>(rng.uniform_int(8000, 48000)), s);
    const auto back = io::decode_wav(io::encode_wav(w, io::WavEncoding::pcm16));
    if (back.channels != w.channels || back.sample_rate != w.sample_rate) fail("wav pcm16", i);
  }
  for (int i = 0; i < 100; ++i, ++cases) {
    io::TensorData t;
    const auto rank = rng.uniform_int(0, 4);
    for (int r = 0; r < rank; ++r) t.dims.push_back(static_cast<std::uint64_t>(rng.uniform_int(1, 6)));
    t.values.resize(t.numel());
    const bool f64 = i % 2 == 0;
    for (double& v : t.values) v = f64 ? rng.normal(0.0, 1e3) : static_cast<float>(rng.normal(0.0, 10.0));
    const auto back = io::decode_tensor(io::encode_tensor(t, f64 ? io::DType::f64 : io::DType::f32));
    if (back.dims != t.dims || back.values != t.values) fail("tensor file", i);
  }
  for (int i = 0; i < 100; ++i, ++cases) {
    dsp::Envelope e;
    e.hop = static_cast<std::size_t>(rng.uniform_int(1, 512));
    e.source_sample_rate = static_cast<std::size_t>(rng.uniform_int(1000, 48000));
    e.values.resize(static_cast<std::size_t>(rng.uniform_int(1, 400)));
    for (double& v : e.values) v = rng.uniform();
    const auto path = dir / ("env" + std::to_string(i) + ".json");
    io::write_envelope(path, e);
    const auto back = io::read_envelope(path);
    dsp::QuantizedEnvelope q = dsp::mu_law_compress(e, dsp::RmsConfig{});
    const auto qback = io::quantized_from_json(io::quantized_to_json(q, dsp::mu_law_expand(q, dsp::RmsConfig{})));
    if (back.values != e.values || back.hop != e.hop || back.source_sample_rate != e.source_sample_rate ||
        qback.classes != q.classes)
      fail("envelope json", i);
  }
  for (int i = 0; i < 50; ++i, ++cases) {
    std::vector<io::ManifestEntry> entries;
    const auto n = rng.uniform_int(1, 8);
    for (int k = 0; k < n; ++k) {
      io::ManifestEntry e;
      e.id = "clip_" + std::to_string(rng.uniform_int(0, 99999)) + (k % 2 ? "_x" : "");
      e.start = static_cast<double>(rng.uniform_int(0, 100));
      e.end = e.start + static_cast<double>(rng.uniform_int(1, 10));
      e.audio_path = (dir / (e.id + ".wav")).string();
      e.feature_path = (dir / (e.id + ".ftns")).string();
      e.label = static_cast<int>(rng.uniform_int(-1, 3));
      entries.push_back(e);
    }
    const auto path = dir / ("manifest" + std::to_string(i) + ".jsonl");
    io::write_manifest(path, entries);
    const auto back = io::parse_manifest(path);
    bool same = back.size() == entries.size();
    for (std::size_t k = 0; same && k < back.size(); ++k)
      same = back[k].id == entries[k].id && back[k].start == entries[k].start && back[k].end == entries[k].end &&
             back[k].audio_path == entries[k].audio_path && back[k].feature_path == entries[k].feature_path &&
             back[k].label == entries[k].label;
    if (!same) fail("manifest", i);
  }
  for (int i = 0; i < 50; ++i, ++cases) {
    Rng init(static_cast<std::uint64_t>(i));
    ad::Linear a(static_cast<std::size_t>(rng.uniform_int(1, 6)), static_cast<std::size_t>(rng.uniform_int(1, 6)),
                 init);
    for (auto& p : a.parameters())
      for (double& v : p.mutable_data()) v = rng.normal(0.0, 1e2);
    const auto path = dir / ("ckpt" + std::to_string(i));
    io::save_checkpoint(path, a, {{"case", i}});
    Rng other(999);
    ad::Linear b(a.weight.dim(1), a.weight.dim(0), other);
    const auto meta = io::load_checkpoint(path, b);
    if (ad::parameter_hash(a) != ad::parameter_hash(b) || meta["case"] != i) fail("checkpoint", i);
  }
  return cases;
}

void criterion_determinism(Outcome& o, ToyExperiment& ex) {
  dit::GenerateRequest req;
  req.semantic = ex.model.semantic_for_class(2);
  req.envelope = ex.eval.front().envelope;
  req.steps = ex.cfg.sampling_steps;
  req.cfg_scale = ex.cfg.cfg_scale;
  req.seed = 4242;
  const auto a = io::encode_wav(dit::generate(ex.model, req), io::WavEncoding::float32);
  const auto b = io::encode_wav(dit::generate(ex.model, req), io::WavEncoding::float32);
  req.seed = 4243;
  const auto c = io::encode_wav(dit::generate(ex.model, req), io::WavEncoding::float32);

  testing::TempDir dir;
  Rng rng(1111);
  std::vector<std::string> failures;
  const std::size_t cases = fuzz_formats(rng, dir.path(), failures);
  o.detail << "fixed-seed generate byte-identical " << (a == b) << " (" << a.size() << " bytes), other seed differs "
           << (a != c) << "; format round trips " << cases - failures.size() << "/" << cases;
  o.require(a == b, "byte-identical WAV");
  o.require(a != c, "seed changes output");
  o.require(cases >= 500, "500 fuzz cases");
  for (const auto& f : failures) o.require(false, f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  ToyExperimentConfig toy;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--base-steps", toy.base_steps)->capture_default_str();
  app.add_option("--controlnet-steps", toy.controlnet_steps)->capture_default_str();
  app.add_option("--eval-clips", toy.eval_clips)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<ToyExperiment> experiment;
  auto toy_experiment = [&]() -> ToyExperiment& {
    if (!experiment) {
      std::fprintf(stderr, "training the toybench model...\n");
      experiment = run_toy_experiment(toy);
    }
    return *experiment;
  };

  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"envelope math oracles", criterion_envelope_math},
      {"mu-law suite", criterion_mu_law},
      {"label smoothing weights", criterion_label_smoothing},
      {"gradient checks", criterion_gradients},
      {"diffusion sanity", criterion_diffusion},
      {"ControlNet zero-init identity", [&](Outcome& o) { criterion_controlnet_identity(o, toy_experiment()); }},
      {"temporal control (toybench)", [&](Outcome& o) { criterion_temporal_control(o, toy_experiment()); }},
      {"semantic control (toybench)", [&](Outcome& o) { criterion_semantic_control(o, toy_experiment()); }},
      {"envelope predictor (toybench)", criterion_predictor},
      {"metrics oracles", criterion_metrics},
      {"determinism and I/O round trips", [&](Outcome& o) { criterion_determinism(o, toy_experiment()); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
