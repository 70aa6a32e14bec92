#include "rfuse/variational.hpp"

#include "rfuse/special.hpp"

#include <numbers>
#include <sstream>

namespace rfuse {

void VBConfig::validate() const {
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(rel_change_threshold > 0.0)) throw ValidationError("rel_change_threshold must be > 0");
  if (!(e0 > 0.0) || !(f0 > 0.0)) throw ValidationError("e0 and f0 must be > 0");
  if (!(eps_z > 0.0) || eps_z >= 1.0) throw ValidationError("eps_z must be in (0, 1)");
}

namespace {

struct SubsetStats {
  SmallMatrix precision;  // zero-padded inverse of R restricted to the subset
  double log_det = 0.0;   // ln |R_subset|, 0 for the empty set
};

/// Inverse and log-determinant of R restricted to the indices set in `mask`.
SubsetStats subset_stats(const SmallMatrix& r, unsigned mask) {
  const int n = static_cast<int>(r.rows());
  std::vector<int> idx;
  for (int i = 0; i < n; ++i) {
    if (mask & (1u << i)) idx.push_back(i);
  }
  SubsetStats s;
  s.precision = SmallMatrix::Zero(n, n);
  if (idx.empty()) return s;
  const int k = static_cast<int>(idx.size());
  SmallMatrix sub(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) sub(a, b) = r(idx[a], idx[b]);
  }
  Eigen::LLT<SmallMatrix> llt(sub);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("surviving noise sub-block is singular");
  }
  const SmallMatrix inv = llt.solve(SmallMatrix::Identity(k, k));
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) s.precision(idx[a], idx[b]) = inv(a, b);
  }
  s.log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return s;
}

double combo_weight(const SmallVector& z, unsigned mask, int skip = -1) {
  double w = 1.0;
  for (int i = 0; i < z.size(); ++i) {
    if (i == skip) continue;
    w *= (mask & (1u << i)) ? z[i] : 1.0 - z[i];
  }
  return w;
}

void check_block_count(const NoiseModel& noise, std::size_t n_blocks, Eigen::Index len) {
  if (static_cast<Eigen::Index>(n_blocks) * noise.bands() != len) {
    throw DimensionError("indicator vector length does not match measurement blocks");
  }
}

}  // namespace

SmallMatrix expected_precision_block(const SmallVector& z_mean, const SmallMatrix& r) {
  const int n = static_cast<int>(r.rows());
  if (z_mean.size() != n) {
    throw DimensionError("indicator block size does not match noise block");
  }
  SmallMatrix acc = SmallMatrix::Zero(n, n);
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    const double w = combo_weight(z_mean, mask);
    if (w == 0.0) continue;
    acc += w * subset_stats(r, mask).precision;
  }
  return acc;
}

namespace detail {

Eigen::VectorXd gather_block(const Eigen::VectorXd& stacked, std::size_t block, std::size_t n_blocks, int bands) {
  Eigen::VectorXd v(bands);
  for (int b = 0; b < bands; ++b) {
    v[b] = stacked[static_cast<Eigen::Index>(static_cast<std::size_t>(b) * n_blocks + block)];
  }
  return v;
}

}  // namespace detail

std::vector<SmallMatrix> expected_precision(const Eigen::VectorXd& z_mean, const NoiseModel& noise,
                                            std::size_t n_blocks) {
  check_block_count(noise, n_blocks, z_mean.size());
  const int bands = noise.bands();
  const SmallMatrix r = noise.pixel_covariance();
  std::vector<SmallMatrix> out(n_blocks);
  for (std::size_t c = 0; c < n_blocks; ++c) {
    const SmallVector z = detail::gather_block(z_mean, c, n_blocks, bands);
    out[c] = expected_precision_block(z, r);
  }
  return out;
}

void update_pi(const Eigen::VectorXd& z_mean, double e0, double f0, Eigen::VectorXd& e_t, Eigen::VectorXd& f_t) {
  e_t = z_mean.array() + e0;
  f_t = (1.0 - z_mean.array()) + f0;
}

SmallVector outlier_data_log_odds(const SmallMatrix& residual_moment, const SmallMatrix& r,
                                  const SmallVector& z_mean) {
  const int n = static_cast<int>(r.rows());
  if (n > 16) {
    throw ValidationError("measurement blocks are limited to 16 bands");
  }
  const unsigned n_masks = 1u << n;
  std::vector<double> quad(n_masks);
  std::vector<double> log_det(n_masks);
  for (unsigned mask = 0; mask < n_masks; ++mask) {
    const auto s = subset_stats(r, mask);
    quad[mask] = (residual_moment * s.precision).trace();
    log_det[mask] = s.log_det;
  }
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  SmallVector out(n);
  for (int i = 0; i < n; ++i) {
    const unsigned bit = 1u << i;
    double acc = 0.0;
    for (unsigned mask = 0; mask < n_masks; ++mask) {
      if (mask & bit) continue;
      const double w = combo_weight(z_mean, mask, i);
      if (w == 0.0) continue;
      // Entry i switched on: extra quadratic form plus ln(2 pi d), with d the conditional
      // variance of entry i given the surviving others (ratio of determinants).
      const double d_quad = quad[mask | bit] - quad[mask];
      const double d_norm = log_2pi + log_det[mask | bit] - log_det[mask];
      acc += w * (-0.5 * (d_quad + d_norm));
    }
    out[i] = acc;
  }
  return out;
}

Eigen::VectorXd update_outliers(const std::vector<SmallMatrix>& residual_moments, const NoiseModel& noise,
                                const Eigen::VectorXd& z_mean, const Eigen::VectorXd& e_t,
                                const Eigen::VectorXd& f_t, double eps_z) {
  const std::size_t n_blocks = residual_moments.size();
  check_block_count(noise, n_blocks, z_mean.size());
  if (e_t.size() != z_mean.size() || f_t.size() != z_mean.size()) {
    throw DimensionError("beta posterior size does not match indicators");
  }
  const int bands = noise.bands();
  const SmallMatrix r = noise.pixel_covariance();
  Eigen::VectorXd z_new(z_mean.size());
  for (std::size_t c = 0; c < n_blocks; ++c) {
    const SmallVector z = detail::gather_block(z_mean, c, n_blocks, bands);
    const SmallVector data = outlier_data_log_odds(residual_moments[c], r, z);
    for (int b = 0; b < bands; ++b) {
      const auto i = static_cast<Eigen::Index>(static_cast<std::size_t>(b) * n_blocks + c);
      const double psi_sum = digamma(e_t[i] + f_t[i]);
      const double ln_pi = digamma(e_t[i]) - psi_sum;
      const double ln_one_minus_pi = digamma(f_t[i]) - psi_sum;
      const double log_odds = ln_pi + data[b] - ln_one_minus_pi;
      // Logistic of the log-odds; both branches avoid overflow.
      const double p1 = log_odds >= 0.0 ? 1.0 / (1.0 + std::exp(-log_odds))
                                        : std::exp(log_odds) / (1.0 + std::exp(log_odds));
      z_new[i] = std::clamp(p1, eps_z, 1.0);
    }
  }
  return z_new;
}

namespace {

Eigen::MatrixXd effective_noise(const std::vector<SmallMatrix>& precision, std::size_t n_blocks, int bands) {
  const auto n = static_cast<Eigen::Index>(n_blocks);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n * bands, n * bands);
  for (std::size_t c = 0; c < n_blocks; ++c) {
    Eigen::LLT<SmallMatrix> llt(precision[c]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("expected precision block is not positive definite");
    }
    const SmallMatrix cov = llt.solve(SmallMatrix::Identity(bands, bands));
    const auto ci = static_cast<Eigen::Index>(c);
    for (int i = 0; i < bands; ++i) {
      for (int j = 0; j < bands; ++j) r(i * n + ci, j * n + ci) = cov(i, j);
    }
  }
  return r;
}

}  // namespace

DenseBelief update_state(const DenseBelief& prior, const Observation& obs, const std::vector<SmallMatrix>& precision) {
  const std::size_t n_blocks = obs.block_count();
  if (precision.size() != n_blocks) {
    throw DimensionError("precision block count does not match observation");
  }
  const Eigen::MatrixXd h = obs.op.dense_matrix();
  if (h.cols() != prior.mean.size()) {
    throw DimensionError("prior dimension does not match operator");
  }
  const Eigen::MatrixXd c = prior.cov * h.transpose();
  Eigen::MatrixXd innov = h * c;
  innov += effective_noise(precision, n_blocks, obs.op.bands());
  symmetrize(innov);
  Eigen::LLT<Eigen::MatrixXd> llt(innov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("innovation matrix is not positive definite");
  }
  // K = C (S + R_eff)^{-1}; P - K (S + R_eff) K^T = P - C (S + R_eff)^{-1} C^T.
  const Eigen::MatrixXd gain_t = llt.solve(c.transpose());
  DenseBelief post;
  post.mean = prior.mean + gain_t.transpose() * (obs.y - h * prior.mean);
  post.cov = prior.cov - c * gain_t;
  symmetrize(post.cov);
  return post;
}

std::vector<SmallMatrix> residual_moments(const DenseBelief& belief, const Observation& obs) {
  const Eigen::MatrixXd h = obs.op.dense_matrix();
  const Eigen::VectorXd r = obs.y - h * belief.mean;
  const Eigen::MatrixXd s = h * belief.cov * h.transpose();
  const std::size_t n_blocks = obs.block_count();
  const int bands = obs.op.bands();
  std::vector<SmallMatrix> out(n_blocks, SmallMatrix::Zero(bands, bands));
  for (std::size_t c = 0; c < n_blocks; ++c) {
    for (int i = 0; i < bands; ++i) {
      for (int j = 0; j < bands; ++j) {
        const auto a = static_cast<Eigen::Index>(obs.op.measurement_index(c, i));
        const auto b = static_cast<Eigen::Index>(obs.op.measurement_index(c, j));
        out[c](i, j) = r[a] * r[b] + s(a, b);
      }
    }
  }
  return out;
}

VbResult<DenseBelief> vbkf_update(const DenseBelief& prior, const Observation& obs, const VBConfig& config) {
  return detail::run_vb(
      prior, obs, config,
      [](const DenseBelief& p, const Observation& o, const std::vector<SmallMatrix>& prec) {
        return update_state(p, o, prec);
      },
      [](const DenseBelief& b, const Observation& o) { return residual_moments(b, o); });
}

std::string trace_to_csv(const std::vector<IterationTrace>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "iter,mean_change,mean_z\n";
  for (const auto& t : trace) {
    os << t.iteration << ',' << t.mean_change << ',' << t.mean_z << '\n';
  }
  return os.str();
}

}  // namespace rfuse
