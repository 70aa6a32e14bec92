#pragma once

#include "rfuse/belief.hpp"
#include "rfuse/raster.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace rfuse {

/// Linear map from the HR state to one sensor's band-stacked measurement vector.
///
/// The coarse sensor is a uniform d x d blur followed by decimation by d, which for
/// kernel size == stride reduces to averaging disjoint d x d footprints. The fine
/// sensor is the d = 1 case. Each band is then scaled by its gain. Output index of
/// band l at (coarse) pixel c is l * N_m + c, matching the planar raster layout.
class DegradationOperator {
 public:
  DegradationOperator() = default;
  DegradationOperator(Modality modality, ImageDims hr, int decimation, std::vector<double> gains = {});

  static DegradationOperator fine(ImageDims hr, std::vector<double> gains = {});
  static DegradationOperator coarse(ImageDims hr, int decimation, std::vector<double> gains = {});

  [[nodiscard]] Modality modality() const { return modality_; }
  [[nodiscard]] const ImageDims& hr_dims() const { return hr_; }
  [[nodiscard]] ImageDims output_dims() const;
  [[nodiscard]] int decimation() const { return decimation_; }
  [[nodiscard]] const std::vector<double>& gains() const { return gains_; }
  [[nodiscard]] int bands() const { return hr_.bands; }
  /// Kernel weight shared by every footprint tap, 1 / d^2.
  [[nodiscard]] double kernel_weight() const { return 1.0 / (decimation_ * decimation_); }

  /// Number of measurement pixels N_m (one measurement block per pixel).
  [[nodiscard]] std::size_t footprint_count() const { return output_dims().pixels(); }
  [[nodiscard]] std::size_t measurement_count() const { return footprint_count() * hr_.bands; }
  [[nodiscard]] std::size_t measurement_index(std::size_t pixel, int band) const {
    return static_cast<std::size_t>(band) * footprint_count() + pixel;
  }

  /// HR pixel indices (row-major) covered by measurement pixel c.
  [[nodiscard]] std::vector<std::size_t> footprint(std::size_t c) const;
  /// Measurement pixel whose footprint contains HR pixel p.
  [[nodiscard]] std::size_t footprint_of(std::size_t hr_pixel) const;

  [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& s) const;
  [[nodiscard]] Eigen::VectorXd adjoint(const Eigen::VectorXd& v) const;
  [[nodiscard]] Eigen::MatrixXd dense_matrix() const;

  /// The L x L block h_c P h_c^T of the measurement covariance for measurement pixel c.
  [[nodiscard]] SmallMatrix block_covariance(std::size_t c, const BlockCovariance& p) const;
  /// h^(i) P h^(i)^T for measurement row i, using only the footprint blocks.
  [[nodiscard]] double row_variance(std::size_t i, const BlockCovariance& p) const;

 private:
  void check_state(const Eigen::VectorXd& s) const;

  Modality modality_ = Modality::kFine;
  ImageDims hr_{};
  int decimation_ = 1;
  std::vector<double> gains_;
};

/// R^m = I (per measurement pixel) kron (scale * block), block acting across bands.
struct NoiseModel {
  SmallMatrix block;
  double scale = 1.0;

  [[nodiscard]] SmallMatrix pixel_covariance() const { return scale * block; }
  [[nodiscard]] int bands() const { return static_cast<int>(block.rows()); }
  /// Throws unless the block is symmetric positive definite and scale > 0.
  void validate() const;
  /// Full n_y x n_y covariance in band-stacked measurement order.
  [[nodiscard]] Eigen::MatrixXd dense(std::size_t n_pixels) const;
};

struct NoisePreset {
  NoiseModel fine;
  NoiseModel coarse;
};

/// Named presets: "oroville" (R_L = 3e-2 P1, R_M = 1e-4 P1 with P1 block [[1,0.1],[0.1,2]])
/// and "elephant_butte" (R_L = 7.5e-3 P0, R_M = 2.5e-5 P0 with the elephant_butte P0 block).
/// "desk" keeps the P1 block but uses 1e-4 / 2.5e-5, sized for the synthetic scenes.
NoisePreset noise_preset(const std::string& name, int bands);

/// Per-pixel P0 block: a * ones + (1 - a) * I, with a = 0.1 ("oroville") or 0.5 ("elephant_butte").
SmallMatrix p0_preset(const std::string& name, int bands);

struct Observation {
  Eigen::VectorXd y;
  Modality modality = Modality::kFine;
  std::int32_t date = 0;
  std::int32_t delta_days = 0;
  DegradationOperator op;
  NoiseModel noise;

  [[nodiscard]] std::size_t block_count() const { return op.footprint_count(); }
  void validate() const;
};

/// Band-stacked measurement vector <-> raster at the sensor's native resolution.
Eigen::VectorXd measurement_from_image(const GridImage& img, const DegradationOperator& op);
GridImage measurement_to_image(const Eigen::VectorXd& y, const DegradationOperator& op, std::int32_t date);

}  // namespace rfuse
