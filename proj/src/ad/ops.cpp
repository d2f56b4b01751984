#include "foley/ad/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "foley/error.hpp"
#include "foley/rng.hpp"

namespace foley::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Grad buffer of parent i, or nullptr when that parent does not need one.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p && p->requires_grad ? &p->grad_buffer() : nullptr;
}

const std::vector<double>& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, op, [deriv](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

// Sizes around an axis: outer (product before), extent, inner (product after).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && !is_suffix(a.shape(), b.shape())) {
    if (is_suffix(b.shape(), a.shape())) return add(b, a);
    shape_mismatch("add", a.shape(), b.shape());
  }
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<double> out(na);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < na; ++i) out[i] = av[i] + bv[i % nb];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [na, nb](Node& self) {
    if (auto* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < na; ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < na; ++i) (*gb)[i % nb] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && !is_suffix(a.shape(), b.shape())) shape_mismatch("sub", a.shape(), b.shape());
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<double> out(na);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < na; ++i) out[i] = av[i] - bv[i % nb];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [na, nb](Node& self) {
    if (auto* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < na; ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < na; ++i) (*gb)[i % nb] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && !is_suffix(a.shape(), b.shape())) {
    if (is_suffix(b.shape(), a.shape())) return mul(b, a);
    shape_mismatch("mul", a.shape(), b.shape());
  }
  const std::size_t na = a.numel(), nb = b.numel();
  std::vector<double> out(na);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < na; ++i) out[i] = av[i] * bv[i % nb];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [na, nb](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (auto* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < na; ++i) (*ga)[i] += self.grad[i] * bv[i % nb];
    if (auto* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < na; ++i) (*gb)[i % nb] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != kb) shape_mismatch("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n);
  ConstMap A(a.values().data(), m, k);
  ConstMap B(b.values().data(), b.dim(0), b.dim(1));
  MutMap C(out.data(), m, n);
  if (transpose_b)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A * B;
  return make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n, transpose_b](Node& self) {
    ConstMap dC(self.grad.data(), m, n);
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (auto* ga = parent_grad(self, 0)) {
      MutMap dA(ga->data(), m, k);
      if (transpose_b)
        dA.noalias() += dC * ConstMap(bv.data(), n, k);
      else
        dA.noalias() += dC * ConstMap(bv.data(), k, n).transpose();
    }
    if (auto* gb = parent_grad(self, 1)) {
      if (transpose_b) {
        MutMap dB(gb->data(), n, k);
        dB.noalias() += dC.transpose() * ConstMap(av.data(), m, k);
      } else {
        MutMap dB(gb->data(), k, n);
        dB.noalias() += ConstMap(av.data(), m, k).transpose() * dC;
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear weight", weight, 2);
  if (x.rank() < 1 || x.shape().back() != weight.dim(1)) shape_mismatch("linear", x.shape(), weight.shape());
  const std::size_t in = weight.dim(1), out_dim = weight.dim(0);
  const std::size_t rows = x.numel() / in;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.numel() != out_dim)) shape_mismatch("linear bias", weight.shape(), bias.shape());
  std::vector<double> out(rows * out_dim);
  {
    ConstMap X(x.values().data(), rows, in);
    ConstMap W(weight.values().data(), out_dim, in);
    MutMap Y(out.data(), rows, out_dim);
    Y.noalias() = X * W.transpose();
    if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), out_dim);
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(shape), std::move(out), inputs, "linear", [rows, in, out_dim, has_bias](Node& self) {
    ConstMap dY(self.grad.data(), rows, out_dim);
    if (auto* gx = parent_grad(self, 0)) {
      MutMap dX(gx->data(), rows, in);
      dX.noalias() += dY * ConstMap(parent_value(self, 1).data(), out_dim, in);
    }
    if (auto* gw = parent_grad(self, 1)) {
      MutMap dW(gw->data(), out_dim, in);
      dW.noalias() += dY.transpose() * ConstMap(parent_value(self, 0).data(), rows, in);
    }
    if (has_bias) {
      if (auto* gb = parent_grad(self, 2)) {
        Eigen::Map<Eigen::RowVectorXd> dB(gb->data(), out_dim);
        dB += dY.colwise().sum();
      }
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_rank("conv1d input", x, 3);
  require_rank("conv1d weight", weight, 3);
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = weight.dim(0), ksize = weight.dim(2);
  if (weight.dim(1) != cin) shape_mismatch("conv1d", x.shape(), weight.shape());
  if (stride < 1) throw InvalidInput("conv1d stride must be >= 1");
  if (len + 2 * padding < ksize) shape_mismatch("conv1d (kernel longer than padded input)", x.shape(), weight.shape());
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != cout) shape_mismatch("conv1d bias", weight.shape(), bias.shape());
  const std::size_t lout = (len + 2 * padding - ksize) / stride + 1;
  const std::size_t ck = cin * ksize;

  // cols[(ci, k), l] = x[ci, l*stride + k - padding]
  auto im2col = [=](const double* xb, RowMat& cols) {
    cols.setZero(ck, lout);
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t k = 0; k < ksize; ++k)
        for (std::size_t l = 0; l < lout; ++l) {
          const auto pos = static_cast<std::ptrdiff_t>(l * stride + k) - static_cast<std::ptrdiff_t>(padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) cols(ci * ksize + k, l) = xb[ci * len + pos];
        }
  };

  std::vector<double> out(batch * cout * lout);
  ConstMap W(weight.values().data(), cout, ck);
  RowMat cols;
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.values().data() + b * cin * len, cols);
    MutMap Y(out.data() + b * cout * lout, cout, lout);
    Y.noalias() = W * cols;
    if (has_bias) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.values().data(), cout);
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({batch, cout, lout}, std::move(out), inputs, "conv1d",
                     [=](Node& self) {
                       auto* gx = parent_grad(self, 0);
                       auto* gw = parent_grad(self, 1);
                       auto* gb = has_bias ? parent_grad(self, 2) : nullptr;
                       const auto& xv = parent_value(self, 0);
                       ConstMap W(parent_value(self, 1).data(), cout, ck);
                       RowMat cols, dcols;
                       for (std::size_t b = 0; b < batch; ++b) {
                         ConstMap dY(self.grad.data() + b * cout * lout, cout, lout);
                         if (gw) {
                           im2col(xv.data() + b * cin * len, cols);
                           MutMap(gw->data(), cout, ck).noalias() += dY * cols.transpose();
                         }
                         if (gb) Eigen::Map<Eigen::VectorXd>(gb->data(), cout) += dY.rowwise().sum();
                         if (gx) {
                           dcols.noalias() = W.transpose() * dY;
                           double* dxb = gx->data() + b * cin * len;
                           for (std::size_t ci = 0; ci < cin; ++ci)
                             for (std::size_t k = 0; k < ksize; ++k)
                               for (std::size_t l = 0; l < lout; ++l) {
                                 const auto pos = static_cast<std::ptrdiff_t>(l * stride + k) -
                                                  static_cast<std::ptrdiff_t>(padding);
                                 if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len))
                                   dxb[ci * len + pos] += dcols(ci * ksize + k, l);
                               }
                         }
                       }
                     });
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  require_rank("conv_transpose1d input", x, 3);
  require_rank("conv_transpose1d weight", weight, 3);
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = weight.dim(1), ksize = weight.dim(2);
  if (weight.dim(0) != cin) shape_mismatch("conv_transpose1d", x.shape(), weight.shape());
  if (stride < 1) throw InvalidInput("conv_transpose1d stride must be >= 1");
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != cout) shape_mismatch("conv_transpose1d bias", weight.shape(), bias.shape());
  const std::size_t lout = (len - 1) * stride + ksize;
  const std::size_t ck = cout * ksize;

  std::vector<double> out(batch * cout * lout, 0.0);
  ConstMap W(weight.values().data(), cin, ck);
  RowMat cols;
  for (std::size_t b = 0; b < batch; ++b) {
    ConstMap X(x.values().data() + b * cin * len, cin, len);
    cols.noalias() = W.transpose() * X;  // [(co, k), l]
    double* yb = out.data() + b * cout * lout;
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t k = 0; k < ksize; ++k)
        for (std::size_t l = 0; l < len; ++l) yb[co * lout + l * stride + k] += cols(co * ksize + k, l);
    if (has_bias)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t l = 0; l < lout; ++l) yb[co * lout + l] += bias.values()[co];
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result({batch, cout, lout}, std::move(out), inputs, "conv_transpose1d", [=](Node& self) {
    auto* gx = parent_grad(self, 0);
    auto* gw = parent_grad(self, 1);
    auto* gb = has_bias ? parent_grad(self, 2) : nullptr;
    const auto& xv = parent_value(self, 0);
    ConstMap W(parent_value(self, 1).data(), cin, ck);
    RowMat dcols(ck, len);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* dyb = self.grad.data() + b * cout * lout;
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t k = 0; k < ksize; ++k)
          for (std::size_t l = 0; l < len; ++l) dcols(co * ksize + k, l) = dyb[co * lout + l * stride + k];
      if (gx) MutMap(gx->data() + b * cin * len, cin, len).noalias() += W * dcols;
      if (gw) MutMap(gw->data(), cin, ck).noalias() += ConstMap(xv.data() + b * cin * len, cin, len) * dcols.transpose();
      if (gb)
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t l = 0; l < lout; ++l) (*gb)[co] += dyb[co * lout + l];
    }
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax of a scalar");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [rows, cols](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += y[c] * (dy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("log_softmax of a scalar");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, "log_softmax", [rows, cols](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += dy[c];
      for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += dy[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm of a scalar");
  const std::size_t cols = x.shape().back();
  if (gamma.numel() != cols || beta.numel() != cols) shape_mismatch("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.values();
  const auto& g = gamma.values();
  const auto& bt = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in[c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * g[c] + bt[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                     [rows, cols, xhat, inv_std](Node& self) {
                       const auto& g = parent_value(self, 1);
                       auto* gx = parent_grad(self, 0);
                       auto* gg = parent_grad(self, 1);
                       auto* gbeta = parent_grad(self, 2);
                       const double n = static_cast<double>(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = self.grad.data() + r * cols;
                         const double* h = xhat->data() + r * cols;
                         if (gg)
                           for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += dy[c] * h[c];
                         if (gbeta)
                           for (std::size_t c = 0; c < cols; ++c) (*gbeta)[c] += dy[c];
                         if (gx) {
                           double mean_d = 0.0, mean_dh = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) {
                             const double d = dy[c] * g[c];
                             mean_d += d;
                             mean_dh += d * h[c];
                           }
                           mean_d /= n;
                           mean_dh /= n;
                           for (std::size_t c = 0; c < cols; ++c)
                             (*gx)[r * cols + c] += (*inv_std)[r] * (dy[c] * g[c] - mean_d - h[c] * mean_dh);
                         }
                       }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& running, bool training,
                  double momentum, double eps) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("batch_norm expects [B, C] or [B, C, L], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), ch = x.dim(1), len = x.rank() == 3 ? x.dim(2) : 1;
  if (gamma.numel() != ch || beta.numel() != ch) shape_mismatch("batch_norm", x.shape(), gamma.shape());
  if (running.mean.size() != ch) running.mean.assign(ch, 0.0);
  if (running.var.size() != ch) running.var.assign(ch, 1.0);
  const std::size_t count = batch * len;
  if (training && count < 2) throw InvalidInput("batch_norm training needs more than one value per channel");

  const auto& xv = x.values();
  auto idx = [=](std::size_t b, std::size_t c, std::size_t l) { return (b * ch + c) * len + l; };
  std::vector<double> mu(ch), inv(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (training) {
      double m = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) m += xv[idx(b, c, l)];
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l) v += (xv[idx(b, c, l)] - m) * (xv[idx(b, c, l)] - m);
      const double biased = v / static_cast<double>(count);
      const double unbiased = v / static_cast<double>(count - 1);
      running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * m;
      running.var[c] = (1.0 - momentum) * running.var[c] + momentum * unbiased;
      mu[c] = m;
      inv[c] = 1.0 / std::sqrt(biased + eps);
    } else {
      mu[c] = running.mean[c];
      inv[c] = 1.0 / std::sqrt(running.var[c] + eps);
    }
  }
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t l = 0; l < len; ++l) {
        const auto i = idx(b, c, l);
        (*xhat)[i] = (xv[i] - mu[c]) * inv[c];
        out[i] = (*xhat)[i] * gamma.values()[c] + beta.values()[c];
      }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
                     [=, inv = std::move(inv)](Node& self) {
                       const auto& g = parent_value(self, 1);
                       auto* gx = parent_grad(self, 0);
                       auto* gg = parent_grad(self, 1);
                       auto* gbeta = parent_grad(self, 2);
                       const double n = static_cast<double>(count);
                       for (std::size_t c = 0; c < ch; ++c) {
                         double sum_d = 0.0, sum_dh = 0.0;
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t l = 0; l < len; ++l) {
                             const auto i = idx(b, c, l);
                             sum_d += self.grad[i];
                             sum_dh += self.grad[i] * (*xhat)[i];
                           }
                         if (gg) (*gg)[c] += sum_dh;
                         if (gbeta) (*gbeta)[c] += sum_d;
                         if (!gx) continue;
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t l = 0; l < len; ++l) {
                             const auto i = idx(b, c, l);
                             if (training)
                               (*gx)[i] += g[c] * inv[c] * (self.grad[i] - sum_d / n - (*xhat)[i] * sum_dh / n);
                             else
                               (*gx)[i] += g[c] * inv[c] * self.grad[i];
                           }
                       }
                     });
}

Tensor embedding(const Tensor& weight, const std::vector<std::size_t>& ids) {
  require_rank("embedding", weight, 2);
  const std::size_t vocab = weight.dim(0), d = weight.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) throw InvalidInput("embedding id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(weight.values().data() + ids[i] * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {weight}, "embedding", [ids, d](Node& self) {
    auto* gw = parent_grad(self, 0);
    if (!gw) return;
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) (*gw)[ids[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidInput("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat axis out of range for " + shape_str(ref));
  Shape shape = ref;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) shape_mismatch("concat", ref, p.shape());
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && p.dim(i) != ref[i]) shape_mismatch("concat", ref, p.shape());
    extents.push_back(p.dim(axis));
    shape[axis] += p.dim(axis);
  }
  const auto s = split_at(shape, axis);
  std::vector<double> out(numel_of(shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const std::size_t chunk = extents[pi] * s.inner;
    const auto& pv = parts[pi].values();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * s.extent * s.inner + offset);
    offset += chunk;
  }
  return make_result(std::move(shape), std::move(out), parts, "concat", [s, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < extents.size(); ++pi) {
      const std::size_t chunk = extents[pi] * s.inner;
      if (auto* gp = parent_grad(self, pi))
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t j = 0; j < chunk; ++j) (*gp)[o * chunk + j] += self.grad[o * s.extent * s.inner + offset + j];
      offset += chunk;
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end) {
  if (axis >= x.rank()) throw ShapeError("slice axis out of range for " + shape_str(x.shape()));
  if (start > end || end > x.dim(axis))
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  const auto s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - start;
  const std::size_t chunk = (end - start) * s.inner;
  std::vector<double> out(numel_of(shape));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + o * s.extent * s.inner + start * s.inner, chunk, out.data() + o * chunk);
  return make_result(std::move(shape), std::move(out), {x}, "slice", [s, start, chunk](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < chunk; ++j) (*gx)[o * s.extent * s.inner + start * s.inner + j] += self.grad[o * chunk + j];
  });
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  Tensor part = slice(x, axis, index, index + 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(part, std::move(shape));
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidInput("stack of zero tensors");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) shape_mismatch("stack", parts.front().shape(), p.shape());
    Shape shape = p.shape();
    if (axis > shape.size()) throw ShapeError("stack axis out of range");
    shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, std::move(shape)));
  }
  return concat(expanded, axis);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  return make_result(std::move(shape), x.values(), {x}, "reshape", [](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1) {
  const std::size_t rank = x.rank();
  if (axis0 >= rank || axis1 >= rank) throw ShapeError("transpose axes out of range for " + shape_str(x.shape()));
  if (axis0 == axis1) return reshape(x, x.shape());
  Shape shape = x.shape();
  std::swap(shape[axis0], shape[axis1]);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // For each output position, the matching input offset.
  std::vector<std::size_t> perm_stride = in_strides;
  std::swap(perm_stride[axis0], perm_stride[axis1]);
  const std::size_t n = x.numel();
  auto mapping = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*mapping)[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += perm_stride[d];
      if (counter[d] < shape[d]) break;
      offset -= perm_stride[d] * shape[d];
      counter[d] = 0;
    }
  }
  std::vector<double> out(n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*mapping)[i]];
  return make_result(std::move(shape), std::move(out), {x}, "transpose", [mapping](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[(*mapping)[i]] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({}, {total}, {x}, "sum", [](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (double& g : *gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw InvalidInput("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor upsample_nearest(const Tensor& x, std::size_t out_len) {
  require_rank("upsample_nearest", x, 3);
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  if (out_len < 1 || len < 1) throw InvalidInput("upsample_nearest needs non-empty input and output");
  std::vector<std::size_t> src(out_len);
  for (std::size_t i = 0; i < out_len; ++i) src[i] = std::min(len - 1, i * len / out_len);
  std::vector<double> out(rows * out_len);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < out_len; ++i) out[r * out_len + i] = xv[r * len + src[i]];
  return make_result({x.dim(0), x.dim(1), out_len}, std::move(out), {x}, "upsample_nearest",
                     [rows, len, out_len, src](Node& self) {
                       auto* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t i = 0; i < out_len; ++i) (*gx)[r * len + src[i]] += self.grad[r * out_len + i];
                     });
}

Tensor upsample_linear(const Tensor& x, std::size_t out_len) {
  require_rank("upsample_linear", x, 3);
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  if (out_len < 1 || len < 1) throw InvalidInput("upsample_linear needs non-empty input and output");
  struct Tap {
    std::size_t left, right;
    double frac;
  };
  std::vector<Tap> taps(out_len);
  const double ratio = static_cast<double>(len) / static_cast<double>(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double src = std::max(0.0, (static_cast<double>(i) + 0.5) * ratio - 0.5);
    const auto left = std::min(static_cast<std::size_t>(src), len - 1);
    const std::size_t right = std::min(left + 1, len - 1);
    taps[i] = {left, right, src - static_cast<double>(left)};
  }
  std::vector<double> out(rows * out_len);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < out_len; ++i) {
      const auto& t = taps[i];
      out[r * out_len + i] = xv[r * len + t.left] * (1.0 - t.frac) + xv[r * len + t.right] * t.frac;
    }
  return make_result({x.dim(0), x.dim(1), out_len}, std::move(out), {x}, "upsample_linear",
                     [rows, len, out_len, taps](Node& self) {
                       auto* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t i = 0; i < out_len; ++i) {
                           const auto& t = taps[i];
                           const double g = self.grad[r * out_len + i];
                           (*gx)[r * len + t.left] += g * (1.0 - t.frac);
                           (*gx)[r * len + t.right] += g * t.frac;
                         }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_rank("attention q", q, 2);
  require_rank("attention k", k, 2);
  require_rank("attention v", v, 2);
  const std::size_t n = q.dim(0), d = q.dim(1), m = k.dim(0);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != m) shape_mismatch("attention", q.shape(), k.shape());
  if (heads < 1 || d % heads != 0) throw ShapeError("attention: dim " + std::to_string(d) + " not divisible by heads");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  ConstMap Q(q.values().data(), n, d);
  ConstMap K(k.values().data(), m, d);
  ConstMap V(v.values().data(), m, d);
  auto probs = std::make_shared<std::vector<RowMat>>(heads);
  std::vector<double> out(n * d);
  MutMap O(out.data(), n, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto col = static_cast<Eigen::Index>(h * dh);
    RowMat s = (Q.middleCols(col, dh) * K.middleCols(col, dh).transpose()) * sc;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double mx = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - mx).exp();
      s.row(r) /= s.row(r).sum();
    }
    O.middleCols(col, dh).noalias() = s * V.middleCols(col, dh);
    (*probs)[h] = std::move(s);
  }
  return make_result({n, d}, std::move(out), {q, k, v}, "attention", [=](Node& self) {
    ConstMap dO(self.grad.data(), n, d);
    ConstMap Q(parent_value(self, 0).data(), n, d);
    ConstMap K(parent_value(self, 1).data(), m, d);
    ConstMap V(parent_value(self, 2).data(), m, d);
    auto* gq = parent_grad(self, 0);
    auto* gk = parent_grad(self, 1);
    auto* gv = parent_grad(self, 2);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h * dh);
      const RowMat& p = (*probs)[h];
      const auto dOh = dO.middleCols(col, dh);
      if (gv) MutMap(gv->data(), m, d).middleCols(col, dh).noalias() += p.transpose() * dOh;
      if (!gq && !gk) continue;
      RowMat dp = dOh * V.middleCols(col, dh).transpose();
      const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
      RowMat ds = p.array() * (dp.colwise() - row_dot).array();
      ds *= sc;
      if (gq) MutMap(gq->data(), n, d).middleCols(col, dh).noalias() += ds * K.middleCols(col, dh);
      if (gk) MutMap(gk->data(), m, d).middleCols(col, dh).noalias() += ds.transpose() * Q.middleCols(col, dh);
    }
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw InvalidInput("dropout probability must be < 1");
  const double keep = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep;
    out[i] = x.values()[i] * (*mask)[i];
  }
  return make_result(x.shape(), std::move(out), {x}, "dropout", [mask](Node& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) shape_mismatch("mse_loss", prediction.shape(), target.shape());
  return mean(square(sub(prediction, target)));
}

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) shape_mismatch("soft_cross_entropy", logits.shape(), target.shape());
  const std::size_t rows = logits.numel() / logits.shape().back();
  return scale(sum(mul(log_softmax(logits), target)), -1.0 / static_cast<double>(rows));
}

}  // namespace foley::ad
