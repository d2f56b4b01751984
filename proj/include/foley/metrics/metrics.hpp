#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <span>

#include "foley/dsp/envelope.hpp"

namespace foley::metrics {

// n x dim matrix of embedding vectors, one per row.
struct EmbeddingSet {
  Eigen::MatrixXd vectors;

  std::size_t size() const { return static_cast<std::size_t>(vectors.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(vectors.cols()); }
};

struct MetricReport {
  std::optional<double> e_l1;
  std::map<int, double> acc_at;
  std::optional<double> frechet;
  std::optional<double> cosine_score;
};

// Mean absolute difference over frames.
double e_l1(std::span<const double> a, std::span<const double> b);
double e_l1(const dsp::Envelope& a, const dsp::Envelope& b);

// Fraction of frames whose predicted class is within k-1 of the ground truth
// (|pred - gt| < k), so acc@1 is exact-match accuracy.
double acc_at_k(const dsp::QuantizedEnvelope& pred, const dsp::QuantizedEnvelope& gt, int k);

// Principal square root of a symmetric positive semi-definite matrix.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m);

Eigen::VectorXd mean_of(const EmbeddingSet& s);
// Unbiased (n-1) covariance.
Eigen::MatrixXd covariance_of(const EmbeddingSet& s);

// Frechet distance between Gaussian fits of two embedding sets:
// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).
double frechet_distance(const EmbeddingSet& a, const EmbeddingSet& b);
double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& cov_b);

// Mean pairwise cosine similarity of row-aligned sets.
double cosine_score(const EmbeddingSet& a, const EmbeddingSet& b);

}  // namespace foley::metrics
