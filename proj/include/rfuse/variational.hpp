#pragma once

// Robust variational measurement update: mean-field coordinate ascent over the
// state q(s), the Bernoulli outlier indicators q(z) and their beta priors q(pi).
//
// A measurement flagged with z = 0 has infinite variance (improper likelihood) and
// carries no information; z = 1 recovers the nominal Gaussian noise R. Indicators
// are coupled only inside one measurement block (the L_m bands of a measurement
// pixel), so every expectation over z is an exact enumeration of 2^L_m combinations.

#include "rfuse/belief.hpp"
#include "rfuse/errors.hpp"
#include "rfuse/sensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace rfuse {

struct VBConfig {
  int max_iters = 20;
  double rel_change_threshold = 0.10;
  double e0 = 0.98;
  double f0 = 0.02;
  double eps_z = 1e-6;
  /// Off pins every indicator to 1, which is the plain Kalman update.
  bool robust = true;
  /// Also stop after the first sweep when ||s1 - s0|| / ||s0|| <= threshold.
  bool first_iteration_fallback = false;

  void validate() const;
};

struct OutlierPosterior {
  Eigen::VectorXd z_mean;
  Eigen::VectorXd e_t;
  Eigen::VectorXd f_t;
  double e0 = 0.98;
  double f0 = 0.02;
};

struct IterationTrace {
  int iteration = 0;
  double mean_change = 0.0;
  double mean_z = 0.0;
};

template <typename Belief>
struct VbResult {
  Belief belief;
  OutlierPosterior outliers;
  int iterations = 0;
  std::vector<IterationTrace> trace;
};

/// <Sigma^{-1}(z)> for one measurement block: the q(z)-weighted average over all
/// indicator combinations of the inverse of R restricted to the surviving (z = 1)
/// entries, zero-padded where z = 0.
SmallMatrix expected_precision_block(const SmallVector& z_mean, const SmallMatrix& r);

/// Expected precision for every measurement block; z_mean is band-stacked.
std::vector<SmallMatrix> expected_precision(const Eigen::VectorXd& z_mean, const NoiseModel& noise,
                                            std::size_t n_blocks);

/// Beta posterior shapes: e_t = e0 + <z>, f_t = f0 + 1 - <z>.
void update_pi(const Eigen::VectorXd& z_mean, double e0, double f0, Eigen::VectorXd& e_t, Eigen::VectorXd& f_t);

/// Data part of ln p(z_i = 1) - ln p(z_i = 0) for each entry of one measurement block, given
/// the residual second moment B = E_q(s)[(y - Hs)(y - Hs)^T] of the block and the current
/// indicator means of the other entries.
SmallVector outlier_data_log_odds(const SmallMatrix& residual_moment, const SmallMatrix& r,
                                  const SmallVector& z_mean);

/// New indicator means (band-stacked) from per-block residual moments and q(pi).
Eigen::VectorXd update_outliers(const std::vector<SmallMatrix>& residual_moments, const NoiseModel& noise,
                                const Eigen::VectorXd& z_mean, const Eigen::VectorXd& e_t,
                                const Eigen::VectorXd& f_t, double eps_z);

/// Kalman-form update with effective measurement covariance <Sigma^{-1}>^{-1} (dense oracle path).
DenseBelief update_state(const DenseBelief& prior, const Observation& obs, const std::vector<SmallMatrix>& precision);

/// Per measurement block: r r^T + H P H^T restricted to the block.
std::vector<SmallMatrix> residual_moments(const DenseBelief& belief, const Observation& obs);

/// Full robust update on a dense belief.
VbResult<DenseBelief> vbkf_update(const DenseBelief& prior, const Observation& obs, const VBConfig& config);

/// Writes "iter,mean_change,mean_z" rows.
std::string trace_to_csv(const std::vector<IterationTrace>& trace);

namespace detail {

Eigen::VectorXd gather_block(const Eigen::VectorXd& stacked, std::size_t block, std::size_t n_blocks, int bands);

/// Coordinate ascent shared by the dense and block-diagonal paths. The state update
/// always restarts from the predictive prior; only the indicator statistics carry over.
template <typename Belief, typename UpdateFn, typename MomentsFn>
VbResult<Belief> run_vb(const Belief& prior, const Observation& obs, const VBConfig& config, UpdateFn&& update,
                        MomentsFn&& moments) {
  config.validate();
  obs.validate();
  const auto n_y = static_cast<Eigen::Index>(obs.op.measurement_count());
  const std::size_t n_blocks = obs.block_count();

  VbResult<Belief> result;
  OutlierPosterior& out = result.outliers;
  out.e0 = config.e0;
  out.f0 = config.f0;

  if (!config.robust) {
    out.z_mean = Eigen::VectorXd::Ones(n_y);
    update_pi(out.z_mean, config.e0, config.f0, out.e_t, out.f_t);
    result.belief = update(prior, obs, expected_precision(out.z_mean, obs.noise, n_blocks));
    result.iterations = 1;
    result.trace.push_back({1, (result.belief.mean - prior.mean).norm(), 1.0});
    return result;
  }

  const double z0 = std::clamp(config.e0 / (config.e0 + config.f0), config.eps_z, 1.0);
  Eigen::VectorXd z = Eigen::VectorXd::Constant(n_y, z0);
  Eigen::VectorXd prev_mean = prior.mean;
  double prev_change = -1.0;
  const double prior_norm = prior.mean.norm();

  for (int it = 1; it <= config.max_iters; ++it) {
    update_pi(z, config.e0, config.f0, out.e_t, out.f_t);
    const auto precision = expected_precision(z, obs.noise, n_blocks);
    result.belief = update(prior, obs, precision);
    const auto b = moments(result.belief, obs);
    z = update_outliers(b, obs.noise, z, out.e_t, out.f_t, config.eps_z);

    const double change = (result.belief.mean - prev_mean).norm();
    result.iterations = it;
    result.trace.push_back({it, change, z.mean()});
    if (!result.belief.mean.allFinite()) {
      throw NumericalError("variational update produced non-finite state");
    }
    if (it == 1 && config.first_iteration_fallback && prior_norm > 0.0 &&
        change <= config.rel_change_threshold * prior_norm) {
      break;
    }
    if (it >= 2 && change <= config.rel_change_threshold * prev_change) {
      break;
    }
    prev_change = change;
    prev_mean = result.belief.mean;
  }
  out.z_mean = z;
  update_pi(out.z_mean, config.e0, config.f0, out.e_t, out.f_t);
  return result;
}

}  // namespace detail

}  // namespace rfuse
