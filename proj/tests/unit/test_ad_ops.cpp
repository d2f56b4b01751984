#include <doctest.h>

#include <cmath>

#include "foley/ad/nn.hpp"
#include "foley/ad/ops.hpp"
#include "foley/ad/optim.hpp"
#include "foley/error.hpp"
#include "support/gradcheck.hpp"

using namespace foley;
using foley::ad::Tensor;
using foley::testing::gradcheck;
using foley::testing::random_tensor;
using foley::testing::weighted_sum;

namespace {

constexpr int kSeeds = 20;
constexpr double kTol = 1e-4;

void check_unary(const char* name, Tensor (*op)(const Tensor&)) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    const std::size_t rows = 1 + rng.uniform_int(0, 3), cols = 1 + rng.uniform_int(0, 5);
    const double err = gradcheck([&](const auto& in) { return weighted_sum(op(in[0]), seed); },
                                 {random_tensor({rows, cols}, rng)});
    INFO(name << " seed " << seed);
    CHECK(err < kTol);
  }
}

}  // namespace

TEST_CASE("matmul by identity returns the other operand") {
  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.mutable_data()[i * 3 + i] = 1.0;
  Tensor out = ad::matmul(eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(out.data()[i] == a.data()[i]);
}

TEST_CASE("softmax of a constant row is uniform") {
  Tensor x = Tensor::full({2, 5}, 3.7);
  Tensor s = ad::softmax(x);
  for (double v : s.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("conv1d hand example") {
  Tensor x = Tensor::from_data({1, 1, 3}, {1, 2, 3});
  Tensor w = Tensor::from_data({1, 1, 2}, {1, 1});
  Tensor y = ad::conv1d(x, w, Tensor(), 1, 0);
  REQUIRE(y.shape() == ad::Shape{1, 1, 2});
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 5.0);
}

TEST_CASE("shape errors name both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    ad::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
}

TEST_CASE("backward basics") {
  Rng rng(3);
  Tensor x = random_tensor({4}, rng);
  x.set_requires_grad(true);
  ad::backward(ad::sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  ad::backward(ad::sum(ad::mul(x, x)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));

  CHECK_THROWS_AS(ad::backward(x), InvalidInput);
}

TEST_CASE("diamond graph accumulates both paths") {
  // y = a*x, z = b*x, loss = sum(y*z) = a*b*sum(x^2): dloss/dx = 2abx.
  Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Tensor y = ad::scale(x, 3.0);
  Tensor z = ad::scale(x, -1.5);
  ad::backward(ad::sum(ad::mul(y, z)));
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * 3.0 * -1.5 * x.data()[i]));
}

TEST_CASE("no-grad guard stops recording") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  ad::NoGradGuard guard;
  Tensor y = ad::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("nan check mode throws on non-finite results") {
  ad::set_nan_check(true);
  Tensor x = Tensor::from_data({1}, {-1.0});
  Tensor big = Tensor::from_data({1}, {1e308});
  CHECK_THROWS_AS(ad::mul(big, Tensor::from_data({1}, {10.0})), Error);
  ad::set_nan_check(false);
  CHECK_NOTHROW(ad::mul(big, Tensor::from_data({1}, {10.0})));
  (void)x;
}

TEST_CASE("gradcheck: elementwise unary ops") {
  check_unary("relu", ad::relu);
  check_unary("sigmoid", ad::sigmoid);
  check_unary("tanh", ad::tanh);
  check_unary("gelu", ad::gelu);
  check_unary("softmax", ad::softmax);
  check_unary("log_softmax", ad::log_softmax);
  check_unary("square", ad::square);
}

TEST_CASE("gradcheck: binary ops with broadcasting") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(100 + seed);
    const std::size_t r = 1 + rng.uniform_int(0, 3), c = 1 + rng.uniform_int(0, 4);
    Tensor a = random_tensor({r, c}, rng), b = random_tensor({r, c}, rng), row = random_tensor({c}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::add(in[0], in[1]), seed); }, {a, b}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::sub(in[0], in[1]), seed); }, {a, b}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::mul(in[0], in[1]), seed); }, {a, b}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::add(in[0], in[1]), seed); }, {a, row}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::mul(in[0], in[1]), seed); }, {a, row}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::scale(ad::add_scalar(in[0], 0.3), -2.0), seed); },
                    {a}) < kTol);
  }
}

TEST_CASE("gradcheck: matmul and linear") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(200 + seed);
    const std::size_t m = 1 + rng.uniform_int(0, 3), k = 1 + rng.uniform_int(0, 4), n = 1 + rng.uniform_int(0, 3);
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng), bt = random_tensor({n, k}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::matmul(in[0], in[1]), seed); }, {a, b}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::matmul(in[0], in[1], true), seed); }, {a, bt}) <
          kTol);
    Tensor x = random_tensor({2, m, k}, rng), w = random_tensor({n, k}, rng), bias = random_tensor({n}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::linear(in[0], in[1], in[2]), seed); },
                    {x, w, bias}) < kTol);
  }
}

TEST_CASE("gradcheck: convolutions") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(300 + seed);
    const std::size_t b = 1 + rng.uniform_int(0, 1), cin = 1 + rng.uniform_int(0, 2), cout = 1 + rng.uniform_int(0, 2);
    const std::size_t k = 1 + rng.uniform_int(0, 3), stride = 1 + rng.uniform_int(0, 2),
                      pad = rng.uniform_int(0, 1);
    const std::size_t len = k + rng.uniform_int(0, 6);
    Tensor x = random_tensor({b, cin, len}, rng), w = random_tensor({cout, cin, k}, rng),
           bias = random_tensor({cout}, rng);
    INFO("seed " << seed);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::conv1d(in[0], in[1], in[2], stride, pad), seed); },
                    {x, w, bias}) < kTol);
    Tensor wt = random_tensor({cin, cout, k}, rng);
    CHECK(gradcheck([&](const auto& in) {
            return weighted_sum(ad::conv_transpose1d(in[0], in[1], in[2], stride), seed);
          },
                    {x, wt, bias}) < kTol);
  }
}

TEST_CASE("gradcheck: normalization") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(400 + seed);
    const std::size_t c = 2 + rng.uniform_int(0, 3);
    Tensor x = random_tensor({3, c}, rng), g = random_tensor({c}, rng), be = random_tensor({c}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::layer_norm(in[0], in[1], in[2]), seed); },
                    {x, g, be}) < kTol);
    Tensor xb = random_tensor({3, c, 4}, rng);
    ad::BatchNormStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)};
    CHECK(gradcheck([&](const auto& in) {
            return weighted_sum(ad::batch_norm(in[0], in[1], in[2], stats, true), seed);
          },
                    {xb, g, be}) < kTol);
    CHECK(gradcheck([&](const auto& in) {
            return weighted_sum(ad::batch_norm(in[0], in[1], in[2], stats, false), seed);
          },
                    {xb, g, be}) < kTol);
    Tensor x2 = random_tensor({5, c}, rng);
    CHECK(gradcheck([&](const auto& in) {
            return weighted_sum(ad::batch_norm(in[0], in[1], in[2], stats, true), seed);
          },
                    {x2, g, be}) < kTol);
  }
}

TEST_CASE("batch norm eval mode uses running statistics") {
  ad::BatchNormStats stats{{1.0}, {4.0}};
  Tensor x = Tensor::from_data({2, 1}, {3.0, 5.0});
  Tensor y = ad::batch_norm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), stats, false, 0.1, 0.0);
  CHECK(y.data()[0] == doctest::Approx(1.0));
  CHECK(y.data()[1] == doctest::Approx(2.0));
}

TEST_CASE("gradcheck: structural ops") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(500 + seed);
    Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 2, 4}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::concat({in[0], in[1]}, 1), seed); }, {a, b}) <
          kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::slice(in[0], 2, 1, 3), seed); }, {a}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::select(in[0], 1, 2), seed); }, {a}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::stack({in[0], in[0]}, 1), seed); }, {a}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::reshape(in[0], {6, 4}), seed); }, {a}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::transpose(in[0], 0, 2), seed); }, {a}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return ad::mean(in[0]); }, {a}) < kTol);
    CHECK(gradcheck([&](const auto& in) { return ad::sum(ad::square(in[0])); }, {a}) < kTol);
    Tensor table = random_tensor({5, 3}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::embedding(in[0], {0, 4, 4, 2}), seed); },
                    {table}) < kTol);
  }
}

TEST_CASE("transpose moves elements") {
  Tensor a = Tensor::from_data({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor t = ad::transpose(a, 0, 1);
  REQUIRE(t.shape() == ad::Shape{3, 2});
  CHECK(std::vector<double>(t.data().begin(), t.data().end()) == std::vector<double>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("gradcheck: upsampling") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(600 + seed);
    const std::size_t len = 1 + rng.uniform_int(0, 5), out = len + rng.uniform_int(0, 7);
    Tensor x = random_tensor({2, 2, len}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::upsample_nearest(in[0], out), seed); }, {x}) <
          kTol);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::upsample_linear(in[0], out), seed); }, {x}) <
          kTol);
  }
}

TEST_CASE("linear upsampling preserves constants and length") {
  Tensor x = Tensor::full({1, 2, 7}, 0.3);
  Tensor y = ad::upsample_linear(x, 19);
  REQUIRE(y.shape() == ad::Shape{1, 2, 19});
  for (double v : y.data()) CHECK(v == doctest::Approx(0.3));
}

TEST_CASE("gradcheck: attention single and multi head") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(700 + seed);
    const std::size_t heads = seed % 2 == 0 ? 1 : 2;
    const std::size_t n = 1 + rng.uniform_int(0, 3), m = 1 + rng.uniform_int(0, 3), d = 2 * heads;
    Tensor q = random_tensor({n, d}, rng), k = random_tensor({m, d}, rng), v = random_tensor({m, d}, rng);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ad::attention(in[0], in[1], in[2], heads), seed); },
                    {q, k, v}) < kTol);
  }
}

TEST_CASE("gradcheck: dropout with a fixed mask") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(800 + seed);
    Tensor x = random_tensor({3, 4}, rng);
    CHECK(gradcheck([&](const auto& in) {
            Rng mask_rng(seed);
            return weighted_sum(ad::dropout(in[0], 0.3, mask_rng, true), seed);
          },
                    {x}) < kTol);
  }
  Rng rng(1);
  Tensor x = Tensor::full({4}, 2.0);
  Tensor y = ad::dropout(x, 0.5, rng, false);
  for (double v : y.data()) CHECK(v == 2.0);
}

TEST_CASE("gradcheck: losses") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(900 + seed);
    Tensor p = random_tensor({3, 5}, rng), t = random_tensor({3, 5}, rng);
    CHECK(gradcheck([&](const auto& in) { return ad::mse_loss(in[0], in[1]); }, {p, t}) < kTol);
    Tensor target = ad::softmax(random_tensor({3, 5}, rng));
    Tensor logits = random_tensor({3, 5}, rng);
    CHECK(gradcheck([&](const auto& in) { return ad::soft_cross_entropy(in[0], target); }, {logits}) < kTol);
  }
}

TEST_CASE("soft cross entropy of uniform logits equals log of class count") {
  Tensor logits = Tensor::zeros({4, 64});
  Tensor target = Tensor::zeros({4, 64});
  for (int r = 0; r < 4; ++r) target.mutable_data()[r * 64 + r] = 1.0;
  CHECK(ad::soft_cross_entropy(logits, target).item() == doctest::Approx(std::log(64.0)));
}

TEST_CASE("gradcheck: bidirectional LSTM") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    ad::BiLstm lstm(3, 2, 2, rng);
    Tensor x = random_tensor({1, 4, 3}, rng);
    auto params = lstm.parameters();
    std::vector<Tensor> inputs{x};
    inputs.insert(inputs.end(), params.begin(), params.end());
    const double err = gradcheck([&](const auto& in) { return weighted_sum(lstm.forward(in[0]), seed); }, inputs);
    INFO("seed " << seed);
    CHECK(err < kTol);
  }
}

TEST_CASE("LSTM with zero weights outputs zeros") {
  Rng rng(5);
  ad::BiLstm lstm(3, 2, 2, rng);
  lstm.visit_parameters([](const std::string&, Tensor& p) {
    std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
  });
  Tensor y = lstm.forward(random_tensor({2, 5, 3}, rng));
  REQUIRE(y.shape() == ad::Shape{2, 5, 4});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("single-step LSTM directions agree when weights match") {
  Rng rng(6);
  ad::BiLstm lstm(3, 2, 1, rng);
  ad::copy_parameters(lstm.forward_layers[0], lstm.backward_layers[0]);
  Tensor y = lstm.forward(random_tensor({1, 1, 3}, rng));
  CHECK(y.data()[0] == y.data()[2]);
  CHECK(y.data()[1] == y.data()[3]);
}

TEST_CASE("adam leaves parameters alone with zero gradient and no decay") {
  Tensor w = Tensor::from_data({3}, {1.0, -2.0, 3.0}, true);
  std::vector<Tensor> params{w};
  ad::OptimizerState state;
  ad::adam_step(state, params, {});
  CHECK(std::vector<double>(w.data().begin(), w.data().end()) == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("optimizers descend on quadratics") {
  Tensor w = Tensor::from_data({1}, {1.0}, true);
  std::vector<Tensor> params{w};
  ad::backward(ad::scale(ad::sum(ad::square(w)), 0.5));
  ad::sgd_step(params, 0.1);
  CHECK(std::abs(w.item()) < 1.0);

  // f(w) = (w0 - 3)^2 + 2 (w1 + 1)^2, minimum at (3, -1).
  Tensor v = Tensor::from_data({2}, {0.0, 0.0}, true);
  std::vector<Tensor> vp{v};
  ad::OptimizerState state;
  ad::AdamConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 200; ++i) {
    v.zero_grad();
    Tensor d = ad::sub(v, Tensor::from_data({2}, {3.0, -1.0}));
    ad::backward(ad::sum(ad::mul(ad::square(d), Tensor::from_data({2}, {1.0, 2.0}))));
    ad::adam_step(state, vp, cfg);
  }
  CHECK(std::hypot(v.data()[0] - 3.0, v.data()[1] + 1.0) < 1e-3);
}

TEST_CASE("identical seeds give identical training trajectories") {
  auto run = [] {
    Rng rng(42);
    ad::Linear layer(4, 3, rng);
    ad::Adam opt(layer.parameters(), {});
    Tensor x = random_tensor({8, 4}, rng), y = random_tensor({8, 3}, rng);
    for (int i = 0; i < 20; ++i) {
      opt.zero_grad();
      ad::backward(ad::mse_loss(layer.forward(x), y));
      opt.step();
    }
    return std::vector<double>(layer.weight.data().begin(), layer.weight.data().end());
  };
  CHECK(run() == run());
}
