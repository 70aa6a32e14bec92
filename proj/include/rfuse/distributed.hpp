#pragma once

// Distributed filtering: one group per HR pixel (its L bands), block-diagonal covariances,
// cubature/sampling prediction through the dynamics, and per-footprint measurement updates.

#include "rfuse/belief.hpp"
#include "rfuse/dynamics.hpp"
#include "rfuse/raster.hpp"
#include "rfuse/sensor.hpp"
#include "rfuse/variational.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace rfuse {

struct GroupLayout {
  std::size_t groups = 0;
  int bands = 0;

  static GroupLayout from_dims(const ImageDims& dims) { return {dims.pixels(), dims.bands}; }
  [[nodiscard]] std::size_t state_size() const { return groups * static_cast<std::size_t>(bands); }
  [[nodiscard]] std::size_t index(std::size_t g, int b) const { return state_index(g, b, bands); }
};

/// Third-degree spherical-radial rule: 2n points with equal weights 1/(2n).
struct CubatureSet {
  std::vector<SmallVector> points;
  double weight = 0.0;
};

/// Unit points +-sqrt(n) e_i, i = 1..n.
CubatureSet unit_cubature(int n);
/// Points L xi_i + mean with L the (jittered) Cholesky factor of cov.
CubatureSet cubature_points(const SmallVector& mean, const SmallMatrix& cov);

enum class EnginePath { kDistributed, kDense };

std::string_view to_string(EnginePath p);
EnginePath engine_path_from_string(std::string_view name);

struct EngineConfig {
  /// Complement samples per step (n~_s).
  int n_samples = 8;
  std::uint64_t seed = 0;
  /// Complement samples are drawn for the whole state, so every group sees full-state draws;
  /// kept for config compatibility and has no effect on the result.
  bool full_state_sampling = false;
  EnginePath path = EnginePath::kDistributed;

  void validate() const;
};

/// Prior for step `step` from the previous posterior. The random-walk model is propagated
/// exactly; the neural model by cubature over each group combined with shared full-state
/// complement samples, the complement of pixel p at sample j being seeded by (seed, step, p).
GaussianBelief predict_distributed(const GaussianBelief& post, const TransitionModel& model, const AuxInput& u,
                                   const EngineConfig& config, std::size_t step);

/// Dense counterpart: exact for the random walk, full-state cubature for the neural model.
DenseBelief predict_dense(const DenseBelief& post, const TransitionModel& model, const AuxInput& u);

/// Kalman-form update with expected precisions, decoupled per measurement pixel. Only the
/// per-pixel diagonal blocks of the posterior covariance are kept.
GaussianBelief update_distributed(const GaussianBelief& prior, const Observation& obs,
                                  const std::vector<SmallMatrix>& precision);

/// Per measurement block: r r^T + h_c P h_c^T.
std::vector<SmallMatrix> residual_moments(const GaussianBelief& belief, const Observation& obs);

/// Full robust update on a block-diagonal belief.
VbResult<GaussianBelief> vbkf_update(const GaussianBelief& prior, const Observation& obs, const VBConfig& config);

struct FuseConfig {
  VBConfig vb;
  EngineConfig engine;
  /// Per-pixel P0 block; the initial covariance is p0_scale * P0.
  SmallMatrix p0_block;
  double p0_scale = 1e-10;
};

struct FuseStep {
  std::int32_t date = 0;
  Modality modality = Modality::kFine;
  std::int32_t delta_days = 0;
  GaussianBelief belief;
  OutlierPosterior outliers;
  int iterations = 0;
  double seconds = 0.0;
};

/// Initializes from `init` (a FINE image at HR size) and filters every observation in order.
/// Element 0 of the result is the initialization.
std::vector<FuseStep> fuse_sequence(const GridImage& init, const std::vector<Observation>& observations,
                                    const TransitionModel& model, const Eigen::VectorXd& q0, int day_of_year_anchor,
                                    const FuseConfig& config);

/// Observations for every manifest entry after the first; COARSE decimation is inferred from the
/// raster size relative to `hr`.
std::vector<Observation> load_observations(const SequenceManifest& manifest, const ImageDims& hr,
                                           const NoisePreset& noise, const std::vector<double>& gains = {});

}  // namespace rfuse
