#pragma once

// Stochastic transition model p(s_k | s_{k-1}; u_k) = N(mu, diag(sigma^2)).
//
//   mu      = ReLU(s_{k-1} + NN_s(s_{k-1}, u_k))
//   sigma^2 = max(delta_k * ReLU(W1 * q0 + W2 * NN_q(s_{k-1}, u_k)), eps_var)
//
// Each head is conv(7->12, k9) -> ReLU -> conv(12->2, k9) -> ReLU -> a*x + b, on the
// input channels [s (L), pos x, pos y, q0 (L), date]. The random-walk model is the
// special case mu = s_{k-1}, sigma^2 = delta_k * q0.

#include "rfuse/raster.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rfuse {

inline constexpr double kVarianceFloor = 1e-9;

enum class PadMode { kZeros, kReplicate };

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 9;
  PadMode pad = PadMode::kZeros;
  /// out_channels x (in_channels * kernel * kernel); column (c * k + ky) * k + kx.
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  [[nodiscard]] int radius() const { return kernel / 2; }
  [[nodiscard]] Eigen::Index tap(int c, int ky, int kx) const { return (c * kernel + ky) * kernel + kx; }
};

/// conv -> ReLU -> conv -> ReLU -> per-element affine.
struct ConvHead {
  Conv2d first;
  Conv2d second;
  double affine_weight = 0.0;
  double affine_bias = 0.0;
};

struct DynamicsParams {
  ConvHead mean_head;
  ConvHead var_head;
  double w1 = 1.0;
  double w2 = 0.0;
  /// Spatial size the network was trained for.
  ImageDims dims;
  /// Multiplier applied to q0 before it enters the network as an input channel.
  double q0_channel_scale = 1.0;

  /// Uniform(+-1/sqrt(fan_in * k^2)) conv init; affine maps start at a ~ U(+-1e-2), b = 0;
  /// W1 = 1, W2 = 0 (the prior-variance model).
  static DynamicsParams init(ImageDims dims, std::uint64_t seed, int hidden = 12, int kernel = 9);
  static DynamicsParams zeros(ImageDims dims, int hidden = 12, int kernel = 9);

  [[nodiscard]] int input_channels() const { return 2 * dims.bands + 3; }

  /// Trainable parameters flattened: both heads (weights, biases, affine) then W1, W2.
  [[nodiscard]] Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& v);
  [[nodiscard]] std::size_t parameter_count() const;
  /// Number of leading entries of flatten() that belong to the networks (L1-penalized).
  [[nodiscard]] std::size_t network_parameter_count() const;

  friend bool operator==(const DynamicsParams& a, const DynamicsParams& b);
};

/// Deterministic auxiliary inputs u_k: position and date channels plus the q0 image.
struct AuxInput {
  ImageDims dims;
  Eigen::VectorXd q0;         // state order, >= 0
  double date_channel = 0.0;  // (day of year of epoch + date) / 365
  double delta_days = 1.0;    // > 0

  static AuxInput make(ImageDims dims, Eigen::VectorXd q0, int day_of_year_anchor, std::int32_t date,
                       double delta_days);
  void validate() const;
};

enum class DynamicsVariant { kRandomWalk, kNeural };

std::string_view to_string(DynamicsVariant v);
DynamicsVariant dynamics_variant_from_string(std::string_view name);

class TransitionModel {
 public:
  static TransitionModel random_walk() { return TransitionModel(DynamicsVariant::kRandomWalk, std::nullopt); }
  static TransitionModel neural(DynamicsParams params) {
    return TransitionModel(DynamicsVariant::kNeural, std::move(params));
  }

  [[nodiscard]] DynamicsVariant variant() const { return variant_; }
  [[nodiscard]] const DynamicsParams& params() const;

  [[nodiscard]] Eigen::VectorXd predict_mean(const Eigen::VectorXd& s_prev, const AuxInput& u) const;
  [[nodiscard]] Eigen::VectorXd predict_variance(const Eigen::VectorXd& s_prev, const AuxInput& u) const;

 private:
  TransitionModel(DynamicsVariant v, std::optional<DynamicsParams> p) : variant_(v), params_(std::move(p)) {}
  DynamicsVariant variant_;
  std::optional<DynamicsParams> params_;
};

/// Per-pixel, per-band, per-day variance of the historical images:
/// q0 = 1/(n * median_gap) * sum_i (s_i - mean)^2, elementwise.
GridImage compute_q0(const std::vector<GridImage>& dataset, const std::vector<std::int32_t>& dates);

/// Raw head output (before the residual / variance combination) in state order.
Eigen::VectorXd head_output(const ConvHead& head, const Eigen::VectorXd& s_prev, const AuxInput& u,
                            double q0_channel_scale);

struct TrainingPair {
  Eigen::VectorXd s_prev;
  Eigen::VectorXd s_next;
  AuxInput aux;
};

struct Regularization {
  double lambda1 = 0.1;
  double lambda2 = 0.001;
};

/// Negated expected log-likelihood plus penalties (the quantity training minimizes):
/// 1/(2 n) sum [ ||s - mu||^2_{diag(sigma^2)^-1} + sum ln sigma^2 ]
///   + lambda1 [(W1 - 1)^2 + W2^2] + lambda2 ||phi||_1.
double nll_objective(const DynamicsParams& params, const std::vector<TrainingPair>& pairs, const Regularization& reg);

/// Exact reverse-mode gradient of nll_objective, same shape as params.
DynamicsParams gradient(const DynamicsParams& params, const std::vector<TrainingPair>& pairs,
                        const Regularization& reg);

/// Objective and flattened gradient from one forward/backward sweep.
double objective_and_gradient(const DynamicsParams& params, const std::vector<TrainingPair>& pairs,
                              const Regularization& reg, Eigen::VectorXd* grad);

enum class Optimizer { kGradientDescent, kAdam };

struct TrainConfig {
  Regularization reg;
  double learning_rate = 1e-3;
  int epochs = 200;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kGradientDescent;
  int hidden = 12;
  int kernel = 9;
};

struct TrainResult {
  DynamicsParams params;
  std::vector<double> objective_history;  // accepted objective after each epoch, [0] = initial
};

/// Consecutive (s_{k-1}, s_k) pairs from a date-ordered historical dataset.
std::vector<TrainingPair> make_training_pairs(const std::vector<GridImage>& dataset, const Eigen::VectorXd& q0,
                                              int day_of_year_anchor);

/// Full-batch training from a seeded init. A step is accepted only if it lowers the
/// objective; otherwise the step size is halved and the step retried in the next epoch.
TrainResult train(const std::vector<TrainingPair>& pairs, ImageDims dims, const TrainConfig& config,
                  const std::optional<DynamicsParams>& start = std::nullopt);

/// Evaluates the neural heads at one pixel after replacing that pixel's bands, reusing the
/// first-layer activations of a cached base state. Only the receptive field of the pixel is
/// touched, so this costs O(kernel^2) instead of a full forward pass.
class NeighborhoodEvaluator {
 public:
  NeighborhoodEvaluator(const DynamicsParams& params, const AuxInput& aux);

  void set_base(const Eigen::VectorXd& s_base);
  /// Predicted mean and variance of pixel `g` when its bands are set to `values`.
  void evaluate(std::size_t g, const double* values, double* mean, double* var) const;

 private:
  struct HeadCache {
    const ConvHead* head = nullptr;
    Eigen::MatrixXd pre1;                 // first conv pre-activation, out x pixels
    std::vector<double> prefix;           // 2D prefix sums of first-conv taps for state channels
  };
  void prepare_head(HeadCache& cache, const ConvHead& head);
  void head_at(const HeadCache& cache, std::size_t g, const double* delta, double* out) const;

  const DynamicsParams& params_;
  AuxInput aux_;
  Eigen::VectorXd base_;
  HeadCache mean_;
  HeadCache var_;
};

/// RFW1 weights file: "RFW1", per-tensor records (u32 name length, name, u32 rank, u32 dims,
/// f32 payload), then W1 and W2 as f32. The q0 tensor is always present; the network
/// tensors only for the neural variant.
struct DynamicsFile {
  GridImage q0;
  std::optional<DynamicsParams> params;
};

std::vector<std::uint8_t> encode_weights(const DynamicsFile& file);
DynamicsFile decode_weights(const std::vector<std::uint8_t>& bytes);
void write_weights(const DynamicsFile& file, const std::filesystem::path& path);
DynamicsFile read_weights(const std::filesystem::path& path);

}  // namespace rfuse
