#include "foley/metrics/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <string>

#include "foley/error.hpp"

namespace foley::metrics {

double e_l1(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw InvalidInput("e_l1 length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw InvalidInput("e_l1 of empty envelopes");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double e_l1(const dsp::Envelope& a, const dsp::Envelope& b) { return e_l1(a.values, b.values); }

double acc_at_k(const dsp::QuantizedEnvelope& pred, const dsp::QuantizedEnvelope& gt, int k) {
  if (pred.size() != gt.size())
    throw InvalidInput("acc@k length mismatch: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  if (pred.num_classes != gt.num_classes) throw InvalidInput("acc@k class count mismatch");
  if (gt.size() == 0) throw InvalidInput("acc@k of empty envelopes");
  if (k < 1) throw InvalidInput("acc@k requires k >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (std::abs(pred.classes[i] - gt.classes[i]) < k) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw InvalidInput("matrix_sqrt_psd expects a square matrix");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw InvalidInput("matrix_sqrt_psd expects a symmetric matrix");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw InvalidInput("eigendecomposition failed");
  Eigen::VectorXd ev = solver.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8 * scale)
      throw InvalidInput("matrix_sqrt_psd: eigenvalue " + std::to_string(ev[i]) + " is negative");
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  const Eigen::MatrixXd& v = solver.eigenvectors();
  Eigen::MatrixXd s = v * ev.asDiagonal() * v.transpose();
  return 0.5 * (s + s.transpose());
}

Eigen::VectorXd mean_of(const EmbeddingSet& s) { return s.vectors.colwise().mean().transpose(); }

Eigen::MatrixXd covariance_of(const EmbeddingSet& s) {
  if (s.size() < 2) throw InvalidInput("covariance needs at least 2 samples");
  const Eigen::MatrixXd centered = s.vectors.rowwise() - s.vectors.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(s.size() - 1);
}

double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& cov_b) {
  if (mu_a.size() != mu_b.size() || cov_a.rows() != cov_b.rows())
    throw InvalidInput("frechet_distance dimension mismatch");
  const Eigen::MatrixXd sqrt_a = matrix_sqrt_psd(cov_a);
  Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  const double cross = matrix_sqrt_psd(inner).trace();
  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
  if (d < -1e-4) std::cerr << "warning: frechet_distance residue " << d << " clamped to 0\n";
  return std::max(0.0, d);
}

double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim())
    throw InvalidInput("frechet_distance dim mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  if (a.size() < 2 || b.size() < 2) throw InvalidInput("frechet_distance needs at least 2 vectors per set");
  if (!a.vectors.allFinite() || !b.vectors.allFinite()) throw InvalidInput("embedding sets contain non-finite values");
  return frechet_distance(mean_of(a), covariance_of(a), mean_of(b), covariance_of(b));
}

double cosine_score(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.size() != b.size() || a.dim() != b.dim()) throw InvalidInput("cosine_score expects paired sets of equal shape");
  if (a.size() == 0) throw InvalidInput("cosine_score of empty sets");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.vectors.rows(); ++i) {
    const double na = a.vectors.row(i).norm();
    const double nb = b.vectors.row(i).norm();
    if (na == 0.0 || nb == 0.0) throw InvalidInput("cosine_score: zero-norm vector at row " + std::to_string(i));
    acc += a.vectors.row(i).dot(b.vectors.row(i)) / (na * nb);
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace foley::metrics
