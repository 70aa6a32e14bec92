#include "rfuse/belief.hpp"

#include "rfuse/errors.hpp"

namespace rfuse {

BlockCovariance BlockCovariance::replicate(std::size_t n_blocks, const SmallMatrix& block) {
  BlockCovariance c;
  c.block_size = static_cast<int>(block.rows());
  c.blocks.assign(n_blocks, block);
  return c;
}

Eigen::MatrixXd BlockCovariance::to_dense() const {
  const Eigen::Index n = static_cast<Eigen::Index>(blocks.size()) * block_size;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t g = 0; g < blocks.size(); ++g) {
    const Eigen::Index o = static_cast<Eigen::Index>(g) * block_size;
    m.block(o, o, block_size, block_size) = blocks[g];
  }
  return m;
}

Eigen::VectorXd BlockCovariance::diagonal() const {
  Eigen::VectorXd d(static_cast<Eigen::Index>(blocks.size()) * block_size);
  for (std::size_t g = 0; g < blocks.size(); ++g) {
    d.segment(static_cast<Eigen::Index>(g) * block_size, block_size) = blocks[g].diagonal();
  }
  return d;
}

DenseBelief to_dense(const GaussianBelief& b) { return DenseBelief{b.mean, b.cov.to_dense()}; }

GaussianBelief to_block(const DenseBelief& b, int block_size) {
  GaussianBelief out;
  out.mean = b.mean;
  out.cov.block_size = block_size;
  const Eigen::Index n_blocks = b.mean.size() / block_size;
  out.cov.blocks.reserve(static_cast<std::size_t>(n_blocks));
  for (Eigen::Index g = 0; g < n_blocks; ++g) {
    out.cov.blocks.emplace_back(b.cov.block(g * block_size, g * block_size, block_size, block_size));
  }
  return out;
}

namespace {

template <typename Matrix>
Matrix cholesky_impl(const Matrix& a) {
  const double scale = 1.0 + a.diagonal().cwiseAbs().maxCoeff();
  for (double jitter : {0.0, 1e-14, 1e-12, 1e-10}) {
    Matrix aj = a;
    aj.diagonal().array() += jitter * scale;
    Eigen::LLT<Matrix> llt(aj);
    if (llt.info() == Eigen::Success) {
      return llt.matrixL();
    }
  }
  throw NumericalError("Cholesky factorization failed: matrix is not positive definite");
}

}  // namespace

SmallMatrix cholesky_with_jitter(const SmallMatrix& a) { return cholesky_impl(a); }
Eigen::MatrixXd cholesky_with_jitter(const Eigen::MatrixXd& a) { return cholesky_impl(a); }

}  // namespace rfuse
