#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "foley/ad/ops.hpp"
#include "foley/ad/tensor.hpp"

namespace foley {
class Rng;
}

namespace foley::ad {

using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;
using BufferVisitor = std::function<void(const std::string& name, std::vector<double>& buffer)>;

// Anything that owns named trainable tensors.
class Module {
 public:
  virtual ~Module() = default;

  virtual void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") = 0;
  // Non-trainable state that must survive a checkpoint (e.g. running statistics).
  virtual void visit_buffers(const BufferVisitor& fn, const std::string& prefix = "") {}

  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<Tensor> parameters();
  std::size_t parameter_count();
  void set_trainable(bool trainable);
  void zero_grad();
};

// Weight init helpers.
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor uniform_tensor(Shape shape, double limit, Rng& rng);

class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;
  // Zero weight and bias (used for zero-initialized projections).
  void zero_();

  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined
};

class Conv1d : public Module {
 public:
  Conv1d() = default;
  Conv1d(std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng, std::size_t stride = 1,
         std::size_t padding = 0);

  Tensor forward(const Tensor& x) const { return conv1d(x, weight, bias, stride, padding); }
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;

  Tensor weight;  // [cout, cin, k]
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

class ConvTranspose1d : public Module {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng, std::size_t stride = 1);

  Tensor forward(const Tensor& x) const { return conv_transpose1d(x, weight, bias, stride); }
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;

  Tensor weight;  // [cin, cout, k]
  Tensor bias;
  std::size_t stride = 1;
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;

  Tensor gamma;
  Tensor beta;
};

class BatchNorm1d : public Module {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(std::size_t channels);

  Tensor forward(const Tensor& x, bool training) { return batch_norm(x, gamma, beta, stats, training); }
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;
  void visit_buffers(const BufferVisitor& fn, const std::string& prefix = "") override;

  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
};

// Single-direction LSTM over x[B, T, D] -> [B, T, H]; gate order i, f, g, o.
class Lstm : public Module {
 public:
  Lstm() = default;
  Lstm(std::size_t input, std::size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x, bool reverse = false) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;
  std::size_t hidden() const { return hidden_; }

  Tensor w_ih;  // [4H, D]
  Tensor w_hh;  // [4H, H]
  Tensor bias;  // [4H]

 private:
  std::size_t hidden_ = 0;
};

// Stacked bidirectional LSTM: x[B, T, D] -> [B, T, 2H]; each layer concatenates
// forward and backward outputs along the feature axis.
class BiLstm : public Module {
 public:
  BiLstm() = default;
  BiLstm(std::size_t input, std::size_t hidden, std::size_t layers, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;

  std::vector<Lstm> forward_layers;
  std::vector<Lstm> backward_layers;
};

// Multi-head attention of x[N, D] over context[M, context_dim] -> [N, D].
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, std::size_t context_dim, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor& context) const;
  void visit_parameters(const ParamVisitor& fn, const std::string& prefix = "") override;

  Linear q, k, v, out;
  std::size_t heads = 1;
};

// Deep copy of a module's parameter values into another module of identical structure.
void copy_parameters(Module& from, Module& to);
// FNV-1a over every parameter value, in visiting order.
std::uint64_t parameter_hash(Module& m);

}  // namespace foley::ad
