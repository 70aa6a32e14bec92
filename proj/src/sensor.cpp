#include "rfuse/sensor.hpp"

#include "rfuse/errors.hpp"

#include <cmath>

namespace rfuse {

DegradationOperator::DegradationOperator(Modality modality, ImageDims hr, int decimation, std::vector<double> gains)
    : modality_(modality), hr_(hr), decimation_(decimation), gains_(std::move(gains)) {
  if (hr_.width <= 0 || hr_.height <= 0 || hr_.bands <= 0) {
    throw DimensionError("operator HR dimensions must be positive");
  }
  if (decimation_ < 1) {
    throw ValidationError("decimation factor must be >= 1");
  }
  if (hr_.width % decimation_ != 0 || hr_.height % decimation_ != 0) {
    throw DimensionError("HR size " + std::to_string(hr_.width) + "x" + std::to_string(hr_.height) +
                         " is not divisible by decimation " + std::to_string(decimation_));
  }
  if (gains_.empty()) {
    gains_.assign(static_cast<std::size_t>(hr_.bands), 1.0);
  }
  if (gains_.size() != static_cast<std::size_t>(hr_.bands)) {
    throw ValidationError("expected one gain per band");
  }
}

DegradationOperator DegradationOperator::fine(ImageDims hr, std::vector<double> gains) {
  return {Modality::kFine, hr, 1, std::move(gains)};
}

DegradationOperator DegradationOperator::coarse(ImageDims hr, int decimation, std::vector<double> gains) {
  return {Modality::kCoarse, hr, decimation, std::move(gains)};
}

ImageDims DegradationOperator::output_dims() const {
  return {hr_.width / decimation_, hr_.height / decimation_, hr_.bands};
}

std::vector<std::size_t> DegradationOperator::footprint(std::size_t c) const {
  const auto out = output_dims();
  if (c >= out.pixels()) {
    throw std::out_of_range("measurement pixel out of range");
  }
  const int cx = static_cast<int>(c % out.width);
  const int cy = static_cast<int>(c / out.width);
  std::vector<std::size_t> px;
  px.reserve(static_cast<std::size_t>(decimation_ * decimation_));
  for (int dy = 0; dy < decimation_; ++dy) {
    for (int dx = 0; dx < decimation_; ++dx) {
      px.push_back(static_cast<std::size_t>(cy * decimation_ + dy) * hr_.width + cx * decimation_ + dx);
    }
  }
  return px;
}

std::size_t DegradationOperator::footprint_of(std::size_t hr_pixel) const {
  const auto x = static_cast<int>(hr_pixel % hr_.width);
  const auto y = static_cast<int>(hr_pixel / hr_.width);
  return static_cast<std::size_t>(y / decimation_) * output_dims().width + x / decimation_;
}

void DegradationOperator::check_state(const Eigen::VectorXd& s) const {
  if (static_cast<std::size_t>(s.size()) != hr_.size()) {
    throw DimensionError("state length " + std::to_string(s.size()) + " != " + std::to_string(hr_.size()));
  }
}

Eigen::VectorXd DegradationOperator::apply(const Eigen::VectorXd& s) const {
  check_state(s);
  const std::size_t n_m = footprint_count();
  const int bands = hr_.bands;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(measurement_count()));
  for (std::size_t c = 0; c < n_m; ++c) {
    for (std::size_t p : footprint(c)) {
      for (int b = 0; b < bands; ++b) {
        y[static_cast<Eigen::Index>(measurement_index(c, b))] += s[static_cast<Eigen::Index>(state_index(p, b, bands))];
      }
    }
    for (int b = 0; b < bands; ++b) {
      y[static_cast<Eigen::Index>(measurement_index(c, b))] *= gains_[b] * kernel_weight();
    }
  }
  return y;
}

Eigen::VectorXd DegradationOperator::adjoint(const Eigen::VectorXd& v) const {
  if (static_cast<std::size_t>(v.size()) != measurement_count()) {
    throw DimensionError("measurement length " + std::to_string(v.size()) + " != " +
                         std::to_string(measurement_count()));
  }
  const int bands = hr_.bands;
  Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hr_.size()));
  for (std::size_t c = 0; c < footprint_count(); ++c) {
    for (std::size_t p : footprint(c)) {
      for (int b = 0; b < bands; ++b) {
        s[static_cast<Eigen::Index>(state_index(p, b, bands))] +=
            gains_[b] * kernel_weight() * v[static_cast<Eigen::Index>(measurement_index(c, b))];
      }
    }
  }
  return s;
}

Eigen::MatrixXd DegradationOperator::dense_matrix() const {
  const int bands = hr_.bands;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(measurement_count()),
                                            static_cast<Eigen::Index>(hr_.size()));
  for (std::size_t c = 0; c < footprint_count(); ++c) {
    for (std::size_t p : footprint(c)) {
      for (int b = 0; b < bands; ++b) {
        h(static_cast<Eigen::Index>(measurement_index(c, b)), static_cast<Eigen::Index>(state_index(p, b, bands))) =
            gains_[b] * kernel_weight();
      }
    }
  }
  return h;
}

SmallMatrix DegradationOperator::block_covariance(std::size_t c, const BlockCovariance& p) const {
  if (p.block_size != hr_.bands || p.size() != hr_.pixels()) {
    throw DimensionError("covariance does not match operator dimensions");
  }
  const int bands = hr_.bands;
  SmallMatrix acc = SmallMatrix::Zero(bands, bands);
  for (std::size_t px : footprint(c)) {
    acc += p.blocks[px];
  }
  const double w = kernel_weight();
  for (int i = 0; i < bands; ++i) {
    for (int j = 0; j < bands; ++j) {
      acc(i, j) *= gains_[i] * gains_[j] * w * w;
    }
  }
  return acc;
}

double DegradationOperator::row_variance(std::size_t i, const BlockCovariance& p) const {
  if (i >= measurement_count()) {
    throw std::out_of_range("measurement row out of range");
  }
  const std::size_t n_m = footprint_count();
  const int band = static_cast<int>(i / n_m);
  const std::size_t c = i % n_m;
  return block_covariance(c, p)(band, band);
}

void NoiseModel::validate() const {
  if (block.rows() == 0 || block.rows() != block.cols()) {
    throw ValidationError("noise block must be square and non-empty");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ValidationError("noise scale must be positive");
  }
  if (!block.isApprox(block.transpose(), 1e-12)) {
    throw ValidationError("noise block must be symmetric");
  }
  Eigen::LLT<SmallMatrix> llt(block);
  if (llt.info() != Eigen::Success) {
    throw ValidationError("noise block must be positive definite");
  }
}

Eigen::MatrixXd NoiseModel::dense(std::size_t n_pixels) const {
  const int bands = this->bands();
  const auto n = static_cast<Eigen::Index>(n_pixels);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n * bands, n * bands);
  const SmallMatrix pix = pixel_covariance();
  for (Eigen::Index c = 0; c < n; ++c) {
    for (int i = 0; i < bands; ++i) {
      for (int j = 0; j < bands; ++j) {
        r(i * n + c, j * n + c) = pix(i, j);
      }
    }
  }
  return r;
}

SmallMatrix p0_preset(const std::string& name, int bands) {
  double a = 0.0;
  if (name == "oroville") {
    a = 0.1;
  } else if (name == "elephant_butte") {
    a = 0.5;
  } else {
    throw ValidationError("unknown P0 preset: " + name);
  }
  SmallMatrix m = SmallMatrix::Constant(bands, bands, a);
  m.diagonal().array() += 1.0 - a;
  return m;
}

NoisePreset noise_preset(const std::string& name, int bands) {
  NoisePreset p;
  if (name == "oroville") {
    if (bands != 2) {
      throw ValidationError("the oroville noise preset is defined for 2 bands");
    }
    SmallMatrix block(2, 2);
    block << 1.0, 0.1, 0.1, 2.0;
    p.fine = NoiseModel{block, 3e-2};
    p.coarse = NoiseModel{block, 1e-4};
  } else if (name == "elephant_butte") {
    const SmallMatrix block = p0_preset("elephant_butte", bands);
    p.fine = NoiseModel{block, 7.5e-3};
    p.coarse = NoiseModel{block, 2.5e-5};
  } else if (name == "desk") {
    SmallMatrix block = SmallMatrix::Identity(bands, bands);
    if (bands == 2) block << 1.0, 0.1, 0.1, 2.0;
    p.fine = NoiseModel{block, 1e-4};
    p.coarse = NoiseModel{block, 2.5e-5};
  } else {
    throw ValidationError("unknown noise preset: " + name);
  }
  return p;
}

void Observation::validate() const {
  if (static_cast<std::size_t>(y.size()) != op.measurement_count()) {
    throw DimensionError("observation length " + std::to_string(y.size()) + " != " +
                         std::to_string(op.measurement_count()));
  }
  if (noise.bands() != op.bands()) {
    throw DimensionError("noise block size does not match band count");
  }
  if (!y.allFinite()) {
    throw ValidationError("observation contains non-finite values");
  }
}

Eigen::VectorXd measurement_from_image(const GridImage& img, const DegradationOperator& op) {
  if (img.dims != op.output_dims()) {
    throw DimensionError("observation raster is " + std::to_string(img.width()) + "x" +
                         std::to_string(img.height()) + "x" + std::to_string(img.bands()) +
                         ", sensor expects " + std::to_string(op.output_dims().width) + "x" +
                         std::to_string(op.output_dims().height) + "x" + std::to_string(op.bands()));
  }
  // Planar band-major raster storage already is the band-stacked order.
  return Eigen::Map<const Eigen::VectorXd>(img.data.data(), static_cast<Eigen::Index>(img.data.size()));
}

GridImage measurement_to_image(const Eigen::VectorXd& y, const DegradationOperator& op, std::int32_t date) {
  if (static_cast<std::size_t>(y.size()) != op.measurement_count()) {
    throw DimensionError("measurement length does not match operator");
  }
  GridImage img(op.output_dims(), date, op.modality());
  Eigen::Map<Eigen::VectorXd>(img.data.data(), y.size()) = y;
  return img;
}

}  // namespace rfuse
