#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace rfuse {

/// Small fixed-capacity matrices for per-pixel band blocks (up to 8 bands).
using SmallMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>;
using SmallVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 8, 1>;

/// Block-diagonal covariance with one block per HR pixel, in pixel-major state order.
struct BlockCovariance {
  int block_size = 0;
  std::vector<SmallMatrix> blocks;

  static BlockCovariance replicate(std::size_t n_blocks, const SmallMatrix& block);

  [[nodiscard]] std::size_t size() const { return blocks.size(); }
  [[nodiscard]] Eigen::MatrixXd to_dense() const;
  /// Diagonal of every block, concatenated in state order.
  [[nodiscard]] Eigen::VectorXd diagonal() const;
};

/// q(s) under the block-diagonal approximation.
struct GaussianBelief {
  Eigen::VectorXd mean;
  BlockCovariance cov;
};

/// Full-covariance belief, used as the oracle path on small scenes.
struct DenseBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

DenseBelief to_dense(const GaussianBelief& b);
/// Keeps only the per-pixel diagonal blocks of a dense covariance.
GaussianBelief to_block(const DenseBelief& b, int block_size);

/// Lower Cholesky factor; adds diagonal jitter up to 1e-10 * (1 + max|diag|) before giving up.
SmallMatrix cholesky_with_jitter(const SmallMatrix& a);
Eigen::MatrixXd cholesky_with_jitter(const Eigen::MatrixXd& a);

inline void symmetrize(SmallMatrix& m) { m = 0.5 * (m + m.transpose()).eval(); }
inline void symmetrize(Eigen::MatrixXd& m) { m = 0.5 * (m + m.transpose()).eval(); }

}  // namespace rfuse
