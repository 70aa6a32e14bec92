#include "rfuse/dynamics.hpp"

#include "rfuse/belief.hpp"
#include "rfuse/errors.hpp"
#include "rfuse/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>

namespace rfuse {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int source_index(int q, int tap, int radius, int n, PadMode pad) {
  const int s = q + tap - radius;
  if (s >= 0 && s < n) return s;
  if (pad == PadMode::kZeros) return -1;
  return std::clamp(s, 0, n - 1);
}

/// (C * k * k) x (H * W) patch matrix of a C x (H * W) activation map.
RowMat im2col(const RowMat& x, int height, int width, int kernel, PadMode pad) {
  const int channels = static_cast<int>(x.rows());
  const int r = kernel / 2;
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  RowMat cols(static_cast<Eigen::Index>(channels) * kernel * kernel, hw);
  std::vector<int> sx(static_cast<std::size_t>(width));
  for (int c = 0; c < channels; ++c) {
    const double* src = x.row(c).data();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* dst = cols.row((static_cast<Eigen::Index>(c) * kernel + ky) * kernel + kx).data();
        for (int px = 0; px < width; ++px) sx[px] = source_index(px, kx, r, width, pad);
        for (int py = 0; py < height; ++py) {
          const int sy = source_index(py, ky, r, height, pad);
          double* row = dst + static_cast<std::ptrdiff_t>(py) * width;
          if (sy < 0) {
            std::fill(row, row + width, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::ptrdiff_t>(sy) * width;
          for (int px = 0; px < width; ++px) row[px] = sx[px] < 0 ? 0.0 : srow[sx[px]];
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col.
RowMat col2im(const RowMat& cols, int channels, int height, int width, int kernel, PadMode pad) {
  const int r = kernel / 2;
  RowMat x = RowMat::Zero(channels, static_cast<Eigen::Index>(height) * width);
  std::vector<int> sx(static_cast<std::size_t>(width));
  for (int c = 0; c < channels; ++c) {
    double* dst = x.row(c).data();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* src = cols.row((static_cast<Eigen::Index>(c) * kernel + ky) * kernel + kx).data();
        for (int px = 0; px < width; ++px) sx[px] = source_index(px, kx, r, width, pad);
        for (int py = 0; py < height; ++py) {
          const int sy = source_index(py, ky, r, height, pad);
          if (sy < 0) continue;
          const double* row = src + static_cast<std::ptrdiff_t>(py) * width;
          double* drow = dst + static_cast<std::ptrdiff_t>(sy) * width;
          for (int px = 0; px < width; ++px) {
            if (sx[px] >= 0) drow[sx[px]] += row[px];
          }
        }
      }
    }
  }
  return x;
}

RowMat conv_forward(const Conv2d& conv, const RowMat& cols) {
  RowMat z = conv.weight * cols;
  z.colwise() += conv.bias;
  return z;
}

/// Network input [s (L), pos x, pos y, q0 * scale (L), date], one row per channel.
RowMat build_input(const Eigen::VectorXd& s, const AuxInput& u, double q0_scale) {
  const ImageDims& d = u.dims;
  const int bands = d.bands;
  const auto hw = static_cast<Eigen::Index>(d.pixels());
  RowMat x(2 * bands + 3, hw);
  for (Eigen::Index p = 0; p < hw; ++p) {
    const int px = static_cast<int>(p % d.width);
    const int py = static_cast<int>(p / d.width);
    for (int b = 0; b < bands; ++b) {
      x(b, p) = s[p * bands + b];
      x(bands + 2 + b, p) = q0_scale * u.q0[p * bands + b];
    }
    x(bands, p) = d.width > 1 ? static_cast<double>(px) / (d.width - 1) : 0.0;
    x(bands + 1, p) = d.height > 1 ? static_cast<double>(py) / (d.height - 1) : 0.0;
    x(2 * bands + 2, p) = u.date_channel;
  }
  return x;
}

struct HeadTrace {
  RowMat cols1;
  RowMat z1;
  RowMat cols2;
  RowMat z2;
  RowMat out;  // L x HW
};

HeadTrace forward_head(const ConvHead& head, const RowMat& x, const ImageDims& d) {
  HeadTrace t;
  t.cols1 = im2col(x, d.height, d.width, head.first.kernel, head.first.pad);
  t.z1 = conv_forward(head.first, t.cols1);
  const RowMat a1 = t.z1.cwiseMax(0.0);
  t.cols2 = im2col(a1, d.height, d.width, head.second.kernel, head.second.pad);
  t.z2 = conv_forward(head.second, t.cols2);
  t.out = (head.affine_weight * t.z2.cwiseMax(0.0)).array() + head.affine_bias;
  return t;
}

/// Row-major L x HW head output to a state-ordered vector.
Eigen::VectorXd to_state(const RowMat& out) {
  Eigen::VectorXd v(out.size());
  Eigen::Map<Eigen::MatrixXd>(v.data(), out.rows(), out.cols()) = out;
  return v;
}

RowMat from_state(const Eigen::VectorXd& v, int bands) {
  const Eigen::Index hw = v.size() / bands;
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), bands, hw);
}

void backward_head(const ConvHead& head, const HeadTrace& t, const RowMat& d_out, const ImageDims& d,
                   ConvHead& g) {
  const RowMat a2 = t.z2.cwiseMax(0.0);
  g.affine_weight += (d_out.array() * a2.array()).sum();
  g.affine_bias += d_out.sum();
  const RowMat dz2 = (head.affine_weight * d_out.array() * (t.z2.array() > 0.0).cast<double>()).matrix();
  g.second.weight.noalias() += dz2 * t.cols2.transpose();
  g.second.bias += dz2.rowwise().sum();
  const RowMat dcols2 = head.second.weight.transpose() * dz2;
  const RowMat da1 = col2im(dcols2, head.first.out_channels, d.height, d.width, head.second.kernel, head.second.pad);
  const RowMat dz1 = (da1.array() * (t.z1.array() > 0.0).cast<double>()).matrix();
  g.first.weight.noalias() += dz1 * t.cols1.transpose();
  g.first.bias += dz1.rowwise().sum();
}

Conv2d make_conv(int in, int out, int kernel, PadMode pad) {
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.pad = pad;
  c.weight = Eigen::MatrixXd::Zero(out, static_cast<Eigen::Index>(in) * kernel * kernel);
  c.bias = Eigen::VectorXd::Zero(out);
  return c;
}

// Mean head: replicate padding on both convs. Variance head: zeros then replicate.
ConvHead make_head(int in, int hidden, int bands, int kernel, PadMode first_pad) {
  ConvHead h;
  h.first = make_conv(in, hidden, kernel, first_pad);
  h.second = make_conv(hidden, bands, kernel, PadMode::kReplicate);
  return h;
}

template <typename Head, typename F>
void visit_head(Head& h, F&& f) {
  f(h.first.weight.data(), static_cast<std::size_t>(h.first.weight.size()));
  f(h.first.bias.data(), static_cast<std::size_t>(h.first.bias.size()));
  f(h.second.weight.data(), static_cast<std::size_t>(h.second.weight.size()));
  f(h.second.bias.data(), static_cast<std::size_t>(h.second.bias.size()));
  f(&h.affine_weight, 1);
  f(&h.affine_bias, 1);
}

template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  visit_head(p.mean_head, f);
  visit_head(p.var_head, f);
  f(&p.w1, 1);
  f(&p.w2, 1);
}

void check_pair_dims(const DynamicsParams& params, const Eigen::VectorXd& s, const AuxInput& u) {
  if (!(u.dims == params.dims)) {
    throw DimensionError("auxiliary input dimensions differ from the trained spatial size");
  }
  if (s.size() != static_cast<Eigen::Index>(params.dims.size())) {
    throw DimensionError("state length does not match the trained spatial size");
  }
}

double q0_scale_for(const Eigen::VectorXd& q0) {
  const double m = q0.size() ? q0.mean() : 0.0;
  return m > 0.0 ? 1.0 / m : 1.0;
}

}  // namespace

// ---------------------------------------------------------------- params

DynamicsParams DynamicsParams::zeros(ImageDims dims, int hidden, int kernel) {
  if (dims.width < 1 || dims.height < 1 || dims.bands < 1) throw ValidationError("degenerate dynamics dimensions");
  if (hidden < 1 || kernel < 1 || kernel % 2 == 0) throw ValidationError("kernel must be odd and hidden >= 1");
  DynamicsParams p;
  p.dims = dims;
  const int in = 2 * dims.bands + 3;
  p.mean_head = make_head(in, hidden, dims.bands, kernel, PadMode::kReplicate);
  p.var_head = make_head(in, hidden, dims.bands, kernel, PadMode::kZeros);
  p.w1 = 1.0;
  p.w2 = 0.0;
  return p;
}

DynamicsParams DynamicsParams::init(ImageDims dims, std::uint64_t seed, int hidden, int kernel) {
  DynamicsParams p = zeros(dims, hidden, kernel);
  std::mt19937_64 rng(seed);
  auto fill_conv = [&rng](Conv2d& c) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.in_channels) * c.kernel * c.kernel);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < c.bias.size(); ++i) c.bias[i] = u(rng);
  };
  std::uniform_real_distribution<double> affine(-1e-2, 1e-2);
  for (ConvHead* h : {&p.mean_head, &p.var_head}) {
    fill_conv(h->first);
    fill_conv(h->second);
    h->affine_weight = affine(rng);
    h->affine_bias = 0.0;
  }
  return p;
}

Eigen::VectorXd DynamicsParams::flatten() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(parameter_count()));
  std::size_t off = 0;
  visit_params(*this, [&](const double* p, std::size_t n) {
    std::copy(p, p + n, v.data() + off);
    off += n;
  });
  return v;
}

void DynamicsParams::unflatten(const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != parameter_count()) {
    throw DimensionError("flattened parameter length mismatch");
  }
  std::size_t off = 0;
  visit_params(*this, [&](double* p, std::size_t n) {
    std::copy(v.data() + off, v.data() + off + n, p);
    off += n;
  });
}

std::size_t DynamicsParams::parameter_count() const { return network_parameter_count() + 2; }

std::size_t DynamicsParams::network_parameter_count() const {
  std::size_t n = 0;
  auto count = [&n](const double*, std::size_t k) { n += k; };
  visit_head(mean_head, count);
  visit_head(var_head, count);
  return n;
}

bool operator==(const DynamicsParams& a, const DynamicsParams& b) {
  if (!(a.dims == b.dims) || a.q0_channel_scale != b.q0_channel_scale) return false;
  if (a.parameter_count() != b.parameter_count()) return false;
  auto same_shape = [](const ConvHead& x, const ConvHead& y) {
    return x.first.kernel == y.first.kernel && x.first.out_channels == y.first.out_channels &&
           x.first.pad == y.first.pad && x.second.pad == y.second.pad;
  };
  if (!same_shape(a.mean_head, b.mean_head) || !same_shape(a.var_head, b.var_head)) return false;
  return a.flatten() == b.flatten();
}

// ---------------------------------------------------------------- aux input

AuxInput AuxInput::make(ImageDims dims, Eigen::VectorXd q0, int day_of_year_anchor, std::int32_t date,
                        double delta_days) {
  AuxInput u;
  u.dims = dims;
  u.q0 = std::move(q0);
  u.date_channel = (static_cast<double>(day_of_year_anchor) + date) / 365.0;
  u.delta_days = delta_days;
  u.validate();
  return u;
}

void AuxInput::validate() const {
  if (q0.size() != static_cast<Eigen::Index>(dims.size())) throw DimensionError("q0 length does not match dims");
  if (!(delta_days > 0.0)) throw ValidationError("delta_days must be > 0");
  for (Eigen::Index i = 0; i < q0.size(); ++i) {
    if (!(q0[i] >= 0.0) || !std::isfinite(q0[i])) throw ValidationError("q0 entries must be finite and >= 0");
  }
}

std::string_view to_string(DynamicsVariant v) { return v == DynamicsVariant::kNeural ? "NN" : "RANDOM_WALK"; }

DynamicsVariant dynamics_variant_from_string(std::string_view name) {
  if (name == "NN") return DynamicsVariant::kNeural;
  if (name == "RANDOM_WALK") return DynamicsVariant::kRandomWalk;
  throw ValidationError("unknown dynamics variant: " + std::string(name));
}

// ---------------------------------------------------------------- transition model

const DynamicsParams& TransitionModel::params() const {
  if (!params_) throw ValidationError("random-walk model has no network parameters");
  return *params_;
}

Eigen::VectorXd head_output(const ConvHead& head, const Eigen::VectorXd& s_prev, const AuxInput& u,
                            double q0_channel_scale) {
  if (s_prev.size() != static_cast<Eigen::Index>(u.dims.size())) {
    throw DimensionError("state length does not match auxiliary input");
  }
  const RowMat x = build_input(s_prev, u, q0_channel_scale);
  return to_state(forward_head(head, x, u.dims).out);
}

Eigen::VectorXd TransitionModel::predict_mean(const Eigen::VectorXd& s_prev, const AuxInput& u) const {
  if (variant_ == DynamicsVariant::kRandomWalk) {
    if (s_prev.size() != u.q0.size()) throw DimensionError("state length does not match q0");
    return s_prev;
  }
  check_pair_dims(*params_, s_prev, u);
  const Eigen::VectorXd r = head_output(params_->mean_head, s_prev, u, params_->q0_channel_scale);
  return (s_prev + r).cwiseMax(0.0);
}

Eigen::VectorXd TransitionModel::predict_variance(const Eigen::VectorXd& s_prev, const AuxInput& u) const {
  if (!(u.delta_days > 0.0)) throw ValidationError("delta_days must be > 0");
  if (variant_ == DynamicsVariant::kRandomWalk) {
    if (s_prev.size() != u.q0.size()) throw DimensionError("state length does not match q0");
    return (u.delta_days * u.q0).cwiseMax(kVarianceFloor);
  }
  check_pair_dims(*params_, s_prev, u);
  const Eigen::VectorXd nq = head_output(params_->var_head, s_prev, u, params_->q0_channel_scale);
  const Eigen::VectorXd v = (params_->w1 * u.q0 + params_->w2 * nq).cwiseMax(0.0);
  return (u.delta_days * v).cwiseMax(kVarianceFloor);
}

// ---------------------------------------------------------------- q0

GridImage compute_q0(const std::vector<GridImage>& dataset, const std::vector<std::int32_t>& dates) {
  if (dataset.size() < 2) throw ValidationError("compute_q0 needs at least 2 historical images");
  if (dates.size() != dataset.size()) throw ValidationError("one date per historical image required");
  for (std::size_t i = 1; i < dates.size(); ++i) {
    if (dates[i] <= dates[i - 1]) throw ValidationError("historical dates must be strictly increasing");
  }
  const ImageDims dims = dataset.front().dims;
  for (const auto& img : dataset) {
    if (!(img.dims == dims)) throw DimensionError("historical images differ in size");
    img.validate();
  }
  std::vector<double> gaps;
  for (std::size_t i = 1; i < dates.size(); ++i) gaps.push_back(dates[i] - dates[i - 1]);
  std::sort(gaps.begin(), gaps.end());
  const std::size_t m = gaps.size();
  const double median = m % 2 ? gaps[m / 2] : 0.5 * (gaps[m / 2 - 1] + gaps[m / 2]);
  if (!(median > 0.0)) throw ValidationError("median acquisition gap is zero");

  const double n = static_cast<double>(dataset.size());
  GridImage q0(dims, 0, Modality::kLatent);
  for (std::size_t i = 0; i < q0.data.size(); ++i) {
    double mean = 0.0;
    for (const auto& img : dataset) mean += img.data[i];
    mean /= n;
    double ss = 0.0;
    for (const auto& img : dataset) ss += (img.data[i] - mean) * (img.data[i] - mean);
    q0.data[i] = ss / (n * median);
  }
  return q0;
}

// ---------------------------------------------------------------- objective

double objective_and_gradient(const DynamicsParams& params, const std::vector<TrainingPair>& pairs,
                              const Regularization& reg, Eigen::VectorXd* grad) {
  if (pairs.empty()) throw ValidationError("training objective needs at least one pair");
  const ImageDims& d = params.dims;
  const int bands = d.bands;
  const double norm = 1.0 / (2.0 * static_cast<double>(pairs.size()));

  DynamicsParams g = DynamicsParams::zeros(d, params.mean_head.first.out_channels, params.mean_head.first.kernel);
  g.w1 = 0.0;
  double loss = 0.0;
  for (const auto& pair : pairs) {
    check_pair_dims(params, pair.s_prev, pair.aux);
    if (pair.s_next.size() != pair.s_prev.size()) throw DimensionError("training pair states differ in length");
    const RowMat x = build_input(pair.s_prev, pair.aux, params.q0_channel_scale);
    const HeadTrace tm = forward_head(params.mean_head, x, d);
    const HeadTrace tv = forward_head(params.var_head, x, d);
    const Eigen::VectorXd om = to_state(tm.out);
    const Eigen::VectorXd ov = to_state(tv.out);
    const double delta = pair.aux.delta_days;

    Eigen::VectorXd d_om(om.size());
    Eigen::VectorXd d_ov(ov.size());
    for (Eigen::Index e = 0; e < om.size(); ++e) {
      const double pre = pair.s_prev[e] + om[e];
      const double mu = std::max(pre, 0.0);
      const double v = params.w1 * pair.aux.q0[e] + params.w2 * ov[e];
      const double raw = delta * std::max(v, 0.0);
      const double var = std::max(raw, kVarianceFloor);
      const double r = pair.s_next[e] - mu;
      loss += norm * (r * r / var + std::log(var));
      const double dmu = norm * (-2.0 * r / var);
      const double dvar = norm * (1.0 / var - r * r / (var * var));
      d_om[e] = pre > 0.0 ? dmu : 0.0;
      const double dv = (raw > kVarianceFloor && v > 0.0) ? dvar * delta : 0.0;
      g.w1 += dv * pair.aux.q0[e];
      g.w2 += dv * ov[e];
      d_ov[e] = dv * params.w2;
    }
    if (grad) {
      backward_head(params.mean_head, tm, from_state(d_om, bands), d, g.mean_head);
      backward_head(params.var_head, tv, from_state(d_ov, bands), d, g.var_head);
    }
  }

  loss += reg.lambda1 * ((params.w1 - 1.0) * (params.w1 - 1.0) + params.w2 * params.w2);
  const Eigen::VectorXd theta = params.flatten();
  const auto n_net = static_cast<Eigen::Index>(params.network_parameter_count());
  loss += reg.lambda2 * theta.head(n_net).cwiseAbs().sum();
  if (!std::isfinite(loss)) throw NumericalError("training objective is not finite (divergence)");

  if (grad) {
    g.w1 += 2.0 * reg.lambda1 * (params.w1 - 1.0);
    g.w2 += 2.0 * reg.lambda1 * params.w2;
    *grad = g.flatten();
    for (Eigen::Index i = 0; i < n_net; ++i) {
      const double s = theta[i] > 0.0 ? 1.0 : (theta[i] < 0.0 ? -1.0 : 0.0);
      (*grad)[i] += reg.lambda2 * s;
    }
  }
  return loss;
}

double nll_objective(const DynamicsParams& params, const std::vector<TrainingPair>& pairs, const Regularization& reg) {
  return objective_and_gradient(params, pairs, reg, nullptr);
}

DynamicsParams gradient(const DynamicsParams& params, const std::vector<TrainingPair>& pairs,
                        const Regularization& reg) {
  Eigen::VectorXd g;
  objective_and_gradient(params, pairs, reg, &g);
  DynamicsParams out = params;
  out.unflatten(g);
  return out;
}

// ---------------------------------------------------------------- training

std::vector<TrainingPair> make_training_pairs(const std::vector<GridImage>& dataset, const Eigen::VectorXd& q0,
                                              int day_of_year_anchor) {
  if (dataset.size() < 3) throw ValidationError("training needs at least 2 consecutive pairs");
  std::vector<TrainingPair> pairs;
  const ImageDims dims = dataset.front().dims;
  for (std::size_t k = 1; k < dataset.size(); ++k) {
    const auto& prev = dataset[k - 1];
    const auto& next = dataset[k];
    if (next.date <= prev.date) throw ValidationError("historical dates must be strictly increasing");
    TrainingPair p;
    p.s_prev = vectorize_state(prev, dims);
    p.s_next = vectorize_state(next, dims);
    p.aux = AuxInput::make(dims, q0, day_of_year_anchor, next.date, static_cast<double>(next.date - prev.date));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

TrainResult train(const std::vector<TrainingPair>& pairs, ImageDims dims, const TrainConfig& config,
                  const std::optional<DynamicsParams>& start) {
  if (pairs.size() < 2) throw ValidationError("training needs at least 2 consecutive pairs");
  if (!(config.learning_rate >= 0.0) || config.epochs < 0) throw ValidationError("invalid training hyperparameters");

  TrainResult result;
  if (start) {
    result.params = *start;
  } else {
    result.params = DynamicsParams::init(dims, config.seed, config.hidden, config.kernel);
    result.params.q0_channel_scale = q0_scale_for(pairs.front().aux.q0);
  }
  DynamicsParams& params = result.params;

  Eigen::VectorXd theta = params.flatten();
  Eigen::VectorXd grad;
  double f = objective_and_gradient(params, pairs, config.reg, &grad);
  result.objective_history.push_back(f);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kAdamEps = 1e-8;
  int adam_t = 0;
  double lr = config.learning_rate;

  DynamicsParams trial = params;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Eigen::VectorXd step;
    Eigen::VectorXd m_next;
    Eigen::VectorXd v_next;
    if (config.optimizer == Optimizer::kAdam) {
      m_next = kBeta1 * m + (1.0 - kBeta1) * grad;
      v_next = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(kBeta1, adam_t + 1);
      const double c2 = 1.0 - std::pow(kBeta2, adam_t + 1);
      step = lr * (m_next / c1).cwiseQuotient(((v_next / c2).cwiseSqrt().array() + kAdamEps).matrix());
    } else {
      step = lr * grad;
    }
    const Eigen::VectorXd theta_trial = theta - step;
    trial.unflatten(theta_trial);
    Eigen::VectorXd g_trial;
    double f_trial = 0.0;
    bool ok = true;
    try {
      f_trial = objective_and_gradient(trial, pairs, config.reg, &g_trial);
    } catch (const NumericalError&) {
      ok = false;
    }
    if (ok && f_trial < f) {
      theta = theta_trial;
      f = f_trial;
      grad = std::move(g_trial);
      if (config.optimizer == Optimizer::kAdam) {
        m = std::move(m_next);
        v = std::move(v_next);
        ++adam_t;
      }
    } else {
      lr *= 0.5;
    }
    result.objective_history.push_back(f);
  }
  params.unflatten(theta);
  return result;
}

// ---------------------------------------------------------------- neighborhood evaluation

namespace {

/// Kernel taps t in [lo, hi] for which output position q reads input position g.
std::pair<int, int> tap_range(int q, int g, int n, int radius, int kernel, PadMode pad) {
  if (pad == PadMode::kZeros || (g > 0 && g < n - 1)) {
    const int t = g - q + radius;
    if (t < 0 || t >= kernel) return {1, 0};
    return {t, t};
  }
  if (n == 1) return {0, kernel - 1};
  if (g == 0) return {0, std::min(kernel - 1, radius - q)};
  return {std::max(0, n - 1 - q + radius), kernel - 1};
}

}  // namespace

NeighborhoodEvaluator::NeighborhoodEvaluator(const DynamicsParams& params, const AuxInput& aux)
    : params_(params), aux_(aux) {
  aux_.validate();
  if (!(aux_.dims == params_.dims)) {
    throw DimensionError("auxiliary input dimensions differ from the trained spatial size");
  }
  prepare_head(mean_, params_.mean_head);
  prepare_head(var_, params_.var_head);
}

void NeighborhoodEvaluator::prepare_head(HeadCache& cache, const ConvHead& head) {
  cache.head = &head;
  const int k = head.first.kernel;
  const int bands = params_.dims.bands;
  const int outs = head.first.out_channels;
  const std::size_t stride = static_cast<std::size_t>(k + 1) * (k + 1);
  cache.prefix.assign(static_cast<std::size_t>(outs) * bands * stride, 0.0);
  for (int o = 0; o < outs; ++o) {
    for (int c = 0; c < bands; ++c) {
      double* pre = cache.prefix.data() + (static_cast<std::size_t>(o) * bands + c) * stride;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          pre[(ky + 1) * (k + 1) + kx + 1] = head.first.weight(o, head.first.tap(c, ky, kx)) +
                                             pre[ky * (k + 1) + kx + 1] + pre[(ky + 1) * (k + 1) + kx] -
                                             pre[ky * (k + 1) + kx];
        }
      }
    }
  }
}

void NeighborhoodEvaluator::set_base(const Eigen::VectorXd& s_base) {
  check_pair_dims(params_, s_base, aux_);
  base_ = s_base;
  const RowMat x = build_input(s_base, aux_, params_.q0_channel_scale);
  for (HeadCache* cache : {&mean_, &var_}) {
    const Conv2d& c = cache->head->first;
    cache->pre1 = conv_forward(c, im2col(x, aux_.dims.height, aux_.dims.width, c.kernel, c.pad));
  }
}

void NeighborhoodEvaluator::head_at(const HeadCache& cache, std::size_t g, const double* delta, double* out) const {
  const ConvHead& head = *cache.head;
  const ImageDims& d = aux_.dims;
  const int bands = d.bands;
  const int k1 = head.first.kernel;
  const int r1 = head.first.radius();
  const int k2 = head.second.kernel;
  const int r2 = head.second.radius();
  const int outs = head.first.out_channels;
  const int gx = static_cast<int>(g % d.width);
  const int gy = static_cast<int>(g / d.width);
  const std::size_t stride = static_cast<std::size_t>(k1 + 1) * (k1 + 1);

  // First-layer activations on the window of radius r2 around g.
  const int x0 = std::max(0, gx - r2);
  const int x1 = std::min(d.width - 1, gx + r2);
  const int y0 = std::max(0, gy - r2);
  const int y1 = std::min(d.height - 1, gy + r2);
  const int ww = x1 - x0 + 1;
  thread_local std::vector<double> act;
  act.assign(static_cast<std::size_t>(outs) * ww * (y1 - y0 + 1), 0.0);

  for (int qy = y0; qy <= y1; ++qy) {
    const auto ry = tap_range(qy, gy, d.height, r1, k1, head.first.pad);
    for (int qx = x0; qx <= x1; ++qx) {
      const auto rx = tap_range(qx, gx, d.width, r1, k1, head.first.pad);
      const bool touched = ry.first <= ry.second && rx.first <= rx.second;
      const Eigen::Index q = static_cast<Eigen::Index>(qy) * d.width + qx;
      double* a = act.data() + (static_cast<std::size_t>(qy - y0) * ww + (qx - x0)) * outs;
      for (int o = 0; o < outs; ++o) {
        double z = cache.pre1(o, q);
        if (touched) {
          for (int c = 0; c < bands; ++c) {
            const double* p = cache.prefix.data() + (static_cast<std::size_t>(o) * bands + c) * stride;
            const int ya = ry.first;
            const int yb = ry.second + 1;
            const int xa = rx.first;
            const int xb = rx.second + 1;
            const double rect = p[yb * (k1 + 1) + xb] - p[ya * (k1 + 1) + xb] - p[yb * (k1 + 1) + xa] +
                                p[ya * (k1 + 1) + xa];
            z += delta[c] * rect;
          }
        }
        a[o] = std::max(z, 0.0);
      }
    }
  }

  for (int c2 = 0; c2 < head.second.out_channels; ++c2) {
    double acc = head.second.bias[c2];
    for (int ky = 0; ky < k2; ++ky) {
      const int sy = source_index(gy, ky, r2, d.height, head.second.pad);
      if (sy < 0) continue;
      for (int kx = 0; kx < k2; ++kx) {
        const int sx = source_index(gx, kx, r2, d.width, head.second.pad);
        if (sx < 0) continue;
        const double* a = act.data() + (static_cast<std::size_t>(sy - y0) * ww + (sx - x0)) * outs;
        for (int o = 0; o < outs; ++o) acc += head.second.weight(c2, head.second.tap(o, ky, kx)) * a[o];
      }
    }
    out[c2] = head.affine_weight * std::max(acc, 0.0) + head.affine_bias;
  }
}

void NeighborhoodEvaluator::evaluate(std::size_t g, const double* values, double* mean, double* var) const {
  if (base_.size() == 0) throw ValidationError("NeighborhoodEvaluator::set_base must be called first");
  const int bands = aux_.dims.bands;
  SmallVector delta(bands);
  SmallVector om(bands);
  SmallVector ov(bands);
  for (int c = 0; c < bands; ++c) delta[c] = values[c] - base_[static_cast<Eigen::Index>(g * bands + c)];
  head_at(mean_, g, delta.data(), om.data());
  head_at(var_, g, delta.data(), ov.data());
  for (int c = 0; c < bands; ++c) {
    const auto e = static_cast<Eigen::Index>(g * bands + c);
    mean[c] = std::max(values[c] + om[c], 0.0);
    const double v = std::max(params_.w1 * aux_.q0[e] + params_.w2 * ov[c], 0.0);
    var[c] = std::max(aux_.delta_days * v, kVarianceFloor);
  }
}

// ---------------------------------------------------------------- RFW1 weights

namespace {

constexpr char kWeightsMagic[4] = {'R', 'F', 'W', '1'};

struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<double> values;
};

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const std::vector<std::uint32_t>& shape,
                const std::vector<double>& values) {
  io::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  io::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto s : shape) io::put_u32(out, s);
  for (double v : values) io::put_f32(out, static_cast<float>(v));
}

std::vector<double> row_major(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  }
  return v;
}

void put_head(std::vector<std::uint8_t>& out, const std::string& prefix, const ConvHead& h) {
  auto conv = [&](const std::string& name, const Conv2d& c) {
    const auto o = static_cast<std::uint32_t>(c.out_channels);
    const auto i = static_cast<std::uint32_t>(c.in_channels);
    const auto k = static_cast<std::uint32_t>(c.kernel);
    put_tensor(out, prefix + "." + name + ".weight", {o, i, k, k}, row_major(c.weight));
    put_tensor(out, prefix + "." + name + ".bias", {o}, std::vector<double>(c.bias.data(), c.bias.data() + o));
  };
  conv("conv1", h.first);
  conv("conv2", h.second);
  put_tensor(out, prefix + ".affine", {2}, {h.affine_weight, h.affine_bias});
}

std::size_t element_count(const std::vector<std::uint32_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) {
    if (s != 0 && n > (std::size_t{1} << 40) / s) throw FormatError("dimension overflow");
    n *= s;
  }
  return n;
}

const Tensor& require(const std::map<std::string, Tensor>& t, const std::string& name,
                      const std::vector<std::uint32_t>& shape) {
  const auto it = t.find(name);
  if (it == t.end()) throw FormatError("missing tensor " + name);
  if (it->second.shape != shape) throw FormatError("tensor " + name + " has unexpected shape");
  return it->second;
}

void read_head(const std::map<std::string, Tensor>& t, const std::string& prefix, ConvHead& h) {
  auto conv = [&](const std::string& name, Conv2d& c) {
    const auto o = static_cast<std::uint32_t>(c.out_channels);
    const auto i = static_cast<std::uint32_t>(c.in_channels);
    const auto k = static_cast<std::uint32_t>(c.kernel);
    const auto& w = require(t, prefix + "." + name + ".weight", {o, i, k, k}).values;
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < c.weight.rows(); ++r) {
      for (Eigen::Index col = 0; col < c.weight.cols(); ++col) c.weight(r, col) = w[n++];
    }
    const auto& b = require(t, prefix + "." + name + ".bias", {o}).values;
    for (std::uint32_t r = 0; r < o; ++r) c.bias[r] = b[r];
  };
  conv("conv1", h.first);
  conv("conv2", h.second);
  const auto& a = require(t, prefix + ".affine", {2}).values;
  h.affine_weight = a[0];
  h.affine_bias = a[1];
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const DynamicsFile& file) {
  file.q0.validate();
  const ImageDims d = file.q0.dims;
  std::vector<std::uint8_t> out(kWeightsMagic, kWeightsMagic + 4);
  // q0 is stored as H x W x L, which is state order.
  const Eigen::VectorXd q0 = vectorize_state(file.q0, d);
  put_tensor(out, "q0",
             {static_cast<std::uint32_t>(d.height), static_cast<std::uint32_t>(d.width),
              static_cast<std::uint32_t>(d.bands)},
             std::vector<double>(q0.data(), q0.data() + q0.size()));
  double w1 = 1.0;
  double w2 = 0.0;
  if (file.params) {
    const DynamicsParams& p = *file.params;
    if (!(p.dims == d)) throw DimensionError("network dims differ from q0 dims");
    put_tensor(out, "input.q0_scale", {1}, {p.q0_channel_scale});
    put_head(out, "mean", p.mean_head);
    put_head(out, "var", p.var_head);
    w1 = p.w1;
    w2 = p.w2;
  }
  io::put_f32(out, static_cast<float>(w1));
  io::put_f32(out, static_cast<float>(w2));
  return out;
}

DynamicsFile decode_weights(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) throw FormatError("bad magic");
  std::map<std::string, Tensor> tensors;
  std::size_t pos = 4;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw FormatError("truncated");
  };
  while (bytes.size() - pos > 8) {
    need(4);
    const std::uint32_t name_len = io::get_u32(bytes.data() + pos);
    pos += 4;
    need(name_len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    need(4);
    const std::uint32_t rank = io::get_u32(bytes.data() + pos);
    pos += 4;
    if (rank > 8) throw FormatError("tensor rank too large");
    need(static_cast<std::size_t>(rank) * 4);
    Tensor t;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.shape.push_back(io::get_u32(bytes.data() + pos));
      pos += 4;
    }
    const std::size_t n = element_count(t.shape);
    need(n * 4);
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i, pos += 4) t.values[i] = io::get_f32(bytes.data() + pos);
    tensors[name] = std::move(t);
  }
  if (bytes.size() - pos != 8) throw FormatError("truncated");
  const double w1 = io::get_f32(bytes.data() + pos);
  const double w2 = io::get_f32(bytes.data() + pos + 4);

  const auto it = tensors.find("q0");
  if (it == tensors.end() || it->second.shape.size() != 3) throw FormatError("missing tensor q0");
  const auto& qs = it->second.shape;
  const ImageDims d{static_cast<int>(qs[1]), static_cast<int>(qs[0]), static_cast<int>(qs[2])};
  DynamicsFile file;
  file.q0 = devectorize_state(Eigen::Map<const Eigen::VectorXd>(it->second.values.data(),
                                                                static_cast<Eigen::Index>(it->second.values.size())),
                              d, 0, Modality::kLatent);
  if (tensors.count("mean.conv1.weight")) {
    const auto& shape = tensors.at("mean.conv1.weight").shape;
    if (shape.size() != 4) throw FormatError("tensor mean.conv1.weight has unexpected shape");
    DynamicsParams p = DynamicsParams::zeros(d, static_cast<int>(shape[0]), static_cast<int>(shape[2]));
    p.q0_channel_scale = require(tensors, "input.q0_scale", {1}).values[0];
    read_head(tensors, "mean", p.mean_head);
    read_head(tensors, "var", p.var_head);
    p.w1 = w1;
    p.w2 = w2;
    file.params = std::move(p);
  }
  return file;
}

void write_weights(const DynamicsFile& file, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_weights(file));
}

DynamicsFile read_weights(const std::filesystem::path& path) { return decode_weights(io::read_file_bytes(path)); }

}  // namespace rfuse
