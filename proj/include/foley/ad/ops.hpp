#pragma once

#include <vector>

#include "foley/ad/tensor.hpp"

namespace foley {
class Rng;
}

namespace foley::ad {

// Elementwise arithmetic. The second operand may also be a trailing suffix of
// the first operand's shape (e.g. a bias row), in which case it is broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);

// [M,K] x [K,N], or [M,K] x [N,K]^T when transpose_b is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// x[..., in] W[out, in]^T + b[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x[B, Cin, L], weight[Cout, Cin, K] -> [B, Cout, (L + 2 pad - K) / stride + 1].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1,
              std::size_t padding = 0);
// x[B, Cin, L], weight[Cin, Cout, K] -> [B, Cout, (L - 1) stride + K].
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride = 1);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Tanh approximation.
Tensor gelu(const Tensor& x);

// Over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
};

// x[B, C, L] or x[B, C]; normalizes each channel over batch and time. In
// training mode uses batch statistics and updates `running`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& running, bool training,
                  double momentum = 0.1, double eps = 1e-5);

// Rows of weight[V, D] selected by ids -> [ids.size(), D].
Tensor embedding(const Tensor& weight, const std::vector<std::size_t>& ids);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end);
// Removes `axis` by taking one index along it.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// x[B, C, L] -> [B, C, out_len].
Tensor upsample_nearest(const Tensor& x, std::size_t out_len);
// Half-pixel aligned linear interpolation.
Tensor upsample_linear(const Tensor& x, std::size_t out_len);

// Scaled dot-product attention with `heads` heads over the last axis:
// q[N, D], k[M, D], v[M, D] -> [N, D].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

// Inverted dropout; identity when not training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

Tensor mse_loss(const Tensor& prediction, const Tensor& target);
// Mean over rows of -sum(target * log_softmax(logits)); target rows are distributions.
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& target);

}  // namespace foley::ad
