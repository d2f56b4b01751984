#include "foley/ad/nn.hpp"

#include <cmath>
#include <cstring>

#include "foley/error.hpp"
#include "foley/rng.hpp"

namespace foley::ad {

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_parameters([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> Module::parameters() {
  std::vector<Tensor> out;
  visit_parameters([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  visit_parameters([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

void Module::set_trainable(bool trainable) {
  visit_parameters([&](const std::string&, Tensor& t) {
    t.set_requires_grad(trainable);
    if (!trainable) t.zero_grad();
  });
}

void Module::zero_grad() {
  visit_parameters([](const std::string&, Tensor& t) { t.zero_grad(); });
}

Tensor uniform_tensor(Shape shape, double limit, Rng& rng) {
  std::vector<double> data(numel_of(shape));
  for (auto& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(xavier_uniform({out, in}, in, out, rng)) {
  if (with_bias) bias = Tensor::zeros({out}, true);
}

void Linear::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "weight", weight);
  if (bias.defined()) fn(prefix + "bias", bias);
}

void Linear::zero_() {
  std::fill(weight.mutable_data().begin(), weight.mutable_data().end(), 0.0);
  if (bias.defined()) std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), 0.0);
}

Conv1d::Conv1d(std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng, std::size_t stride_,
               std::size_t padding_)
    : weight(xavier_uniform({cout, cin, kernel}, cin * kernel, cout * kernel, rng)),
      bias(Tensor::zeros({cout}, true)),
      stride(stride_),
      padding(padding_) {}

void Conv1d::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "weight", weight);
  fn(prefix + "bias", bias);
}

ConvTranspose1d::ConvTranspose1d(std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng,
                                 std::size_t stride_)
    : weight(xavier_uniform({cin, cout, kernel}, cin * kernel, cout * kernel, rng)),
      bias(Tensor::zeros({cout}, true)),
      stride(stride_) {}

void ConvTranspose1d::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "weight", weight);
  fn(prefix + "bias", bias);
}

LayerNorm::LayerNorm(std::size_t dim) : gamma(Tensor::full({dim}, 1.0, true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "gamma", gamma);
  fn(prefix + "beta", beta);
}

BatchNorm1d::BatchNorm1d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {
  stats.mean.assign(channels, 0.0);
  stats.var.assign(channels, 1.0);
}

void BatchNorm1d::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "gamma", gamma);
  fn(prefix + "beta", beta);
}

void BatchNorm1d::visit_buffers(const BufferVisitor& fn, const std::string& prefix) {
  fn(prefix + "running_mean", stats.mean);
  fn(prefix + "running_var", stats.var);
}

Lstm::Lstm(std::size_t input, std::size_t hidden, Rng& rng) : hidden_(hidden) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih = uniform_tensor({4 * hidden, input}, limit, rng);
  w_hh = uniform_tensor({4 * hidden, hidden}, limit, rng);
  std::vector<double> b(4 * hidden, 0.0);
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden), b.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
  bias = Tensor::from_data({4 * hidden}, std::move(b), true);
}

Tensor Lstm::forward(const Tensor& x, bool reverse) const {
  if (x.rank() != 3) throw ShapeError("lstm expects [B, T, D], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), steps = x.dim(1), input = x.dim(2);
  const std::size_t h4 = 4 * hidden_;
  if (input != w_ih.dim(1)) throw ShapeError("lstm input dim " + std::to_string(input) + " != " + std::to_string(w_ih.dim(1)));
  const Tensor projected = reshape(linear(reshape(x, {batch * steps, input}), w_ih, bias), {batch, steps, h4});
  Tensor h = Tensor::zeros({batch, hidden_});
  Tensor c = Tensor::zeros({batch, hidden_});
  std::vector<Tensor> outputs(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const Tensor gates = add(select(projected, 1, t), matmul(h, w_hh, true));
    const Tensor in_gate = sigmoid(slice(gates, 1, 0, hidden_));
    const Tensor forget = sigmoid(slice(gates, 1, hidden_, 2 * hidden_));
    const Tensor cand = tanh(slice(gates, 1, 2 * hidden_, 3 * hidden_));
    const Tensor out_gate = sigmoid(slice(gates, 1, 3 * hidden_, h4));
    c = add(mul(forget, c), mul(in_gate, cand));
    h = mul(out_gate, tanh(c));
    outputs[t] = h;
  }
  return stack(outputs, 1);
}

void Lstm::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  fn(prefix + "w_ih", w_ih);
  fn(prefix + "w_hh", w_hh);
  fn(prefix + "bias", bias);
}

BiLstm::BiLstm(std::size_t input, std::size_t hidden, std::size_t layers, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input : 2 * hidden;
    forward_layers.emplace_back(in, hidden, rng);
    backward_layers.emplace_back(in, hidden, rng);
  }
}

Tensor BiLstm::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < forward_layers.size(); ++l)
    h = concat({forward_layers[l].forward(h, false), backward_layers[l].forward(h, true)}, 2);
  return h;
}

void BiLstm::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  for (std::size_t l = 0; l < forward_layers.size(); ++l) {
    forward_layers[l].visit_parameters(fn, prefix + "l" + std::to_string(l) + ".fwd.");
    backward_layers[l].visit_parameters(fn, prefix + "l" + std::to_string(l) + ".bwd.");
  }
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads_, std::size_t context_dim, Rng& rng)
    : q(dim, dim, rng), k(context_dim, dim, rng), v(context_dim, dim, rng), out(dim, dim, rng), heads(heads_) {
  if (heads == 0 || dim % heads != 0) throw InvalidInput("attention dim must be divisible by heads");
}

Tensor MultiHeadAttention::forward(const Tensor& x, const Tensor& context) const {
  return out.forward(attention(q.forward(x), k.forward(context), v.forward(context), heads));
}

void MultiHeadAttention::visit_parameters(const ParamVisitor& fn, const std::string& prefix) {
  q.visit_parameters(fn, prefix + "q.");
  k.visit_parameters(fn, prefix + "k.");
  v.visit_parameters(fn, prefix + "v.");
  out.visit_parameters(fn, prefix + "out.");
}

void copy_parameters(Module& from, Module& to) {
  auto src = from.named_parameters();
  auto dst = to.named_parameters();
  if (src.size() != dst.size()) throw ShapeError("copy_parameters: modules differ in structure");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].second.shape() != dst[i].second.shape())
      throw ShapeError("copy_parameters: " + src[i].first + " shape " + shape_str(src[i].second.shape()) + " vs " +
                       shape_str(dst[i].second.shape()));
    auto d = dst[i].second.mutable_data();
    std::copy(src[i].second.data().begin(), src[i].second.data().end(), d.begin());
  }
}

std::uint64_t parameter_hash(Module& m) {
  std::uint64_t h = 1469598103934665603ULL;
  m.visit_parameters([&](const std::string&, Tensor& t) {
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  });
  return h;
}

}  // namespace foley::ad
