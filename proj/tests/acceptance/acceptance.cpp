// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance <path-to-rfuse-cli> [criterion numbers...]
#include "rfuse/distributed.hpp"
#include "rfuse/dynamics.hpp"
#include "rfuse/evaluation.hpp"
#include "rfuse/io.hpp"
#include "rfuse/scene.hpp"
#include "rfuse/special.hpp"
#include "rfuse/variational.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace rfuse;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kKalmanTol = 1e-8;
constexpr double kKalmanSeconds = 1.0;
constexpr double kFineFidelityTol = 1e-6;
constexpr double kCoarseFidelityTol = 5e-3;
constexpr double kFidelitySeconds = 10.0;
constexpr double kCloudRmseRatio = 0.5;
constexpr double kContaminatedZ = 0.1;
constexpr double kCleanZ = 0.9;
constexpr double kCloudNoiseMultiple = 10.0;
constexpr double kCloudSeconds = 120.0;
constexpr double kRobustOverhead = 0.05;
constexpr double kNeuralGain = 0.10;
constexpr double kNeuralSeconds = 600.0;
constexpr double kGradientTol = 1e-3;
constexpr double kEnumerationTol = 1e-12;
constexpr double kDigammaTol = 1e-10;
constexpr double kCubatureTol = 1e-12;
constexpr int kSeeds = 5;

std::string g_cli;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Problem {
  ScenarioConfig cfg;
  std::vector<GridImage> scene;
  std::vector<Observation> obs;
  Eigen::VectorXd q0;
  GridImage init;
  std::vector<Observation> rest;
};

Problem make_problem(const ScenarioConfig& cfg, std::uint64_t seed) {
  Problem p;
  p.cfg = cfg;
  p.scene = generate_scene(cfg, seed);
  const auto hist = generate_history(cfg, seed);
  std::vector<std::int32_t> dates;
  for (const auto& h : hist) dates.push_back(h.date);
  p.q0 = vectorize_state(compute_q0(hist, dates), cfg.dims());
  p.obs = inject_clouds(observe_schedule(p.scene, cfg, seed), cfg.clouds);
  p.init = measurement_to_image(p.obs[0].y, p.obs[0].op, p.obs[0].date);
  p.rest.assign(p.obs.begin() + 1, p.obs.end());
  return p;
}

FuseConfig fuse_config(bool robust, EnginePath path, std::uint64_t seed) {
  FuseConfig fc;
  fc.vb.robust = robust;
  fc.p0_block = p0_preset("oroville", 2);
  fc.engine.path = path;
  fc.engine.seed = seed;
  return fc;
}

double step_rmse(const Problem& p, const std::vector<FuseStep>& steps, std::size_t k) {
  return rmse(devectorize_state(steps[k].belief.mean, p.cfg.dims()), p.scene[k]);
}

double average_rmse(const Problem& p, const std::vector<FuseStep>& steps) {
  double sum = 0.0;
  for (std::size_t k = 1; k < steps.size(); ++k) sum += step_rmse(p, steps, k);
  return sum / static_cast<double>(steps.size() - 1);
}

double field_rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

// ------------------------------------------------------------------ 1

Outcome kalman_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioConfig sc = ScenarioConfig::desk();
  sc.width = sc.height = 4;
  sc.decimation = 2;
  sc.water.center_x = sc.water.center_y = 2.0;
  sc.water.radius = 1.5;
  sc.schedule = {{0, Modality::kFine},    {4, Modality::kCoarse}, {8, Modality::kCoarse},
                 {12, Modality::kFine},   {16, Modality::kCoarse}, {20, Modality::kFine}};
  sc.history_frames = 8;
  Problem p = make_problem(sc, 11);
  // A second acquisition on the same day exercises the zero-gap path.
  p.rest.insert(p.rest.begin() + 2, p.rest[1]);

  const FuseConfig fc = fuse_config(false, EnginePath::kDense, 0);
  const auto steps = fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0, fc);

  const auto n = static_cast<Eigen::Index>(sc.dims().size());
  Eigen::VectorXd x = vectorize_state(p.init, sc.dims());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index g = 0; g < n / 2; ++g) cov.block(2 * g, 2 * g, 2, 2) = fc.p0_scale * fc.p0_block;
  double worst = 0.0;
  std::int32_t prev = p.init.date;
  for (std::size_t k = 0; k < p.rest.size(); ++k) {
    const Observation& o = p.rest[k];
    const int delta = o.date - prev;
    prev = o.date;
    if (delta > 0) cov.diagonal() += (delta * p.q0).cwiseMax(kVarianceFloor);
    const Eigen::MatrixXd h = o.op.dense_matrix();
    const Eigen::MatrixXd s = h * cov * h.transpose() + o.noise.dense(o.op.footprint_count());
    const Eigen::MatrixXd gain = cov * h.transpose() * s.inverse();
    x += gain * (o.y - h * x);
    cov = (Eigen::MatrixXd::Identity(n, n) - gain * h) * cov;
    cov = 0.5 * (cov + cov.transpose()).eval();
    worst = std::max(worst, (steps[k + 1].belief.mean - x).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  return {worst < kKalmanTol && secs < kKalmanSeconds,
          "max|dmean| " + fmt(worst) + " (< " + fmt(kKalmanTol) + "), " + fmt(secs) + " s"};
}

// ------------------------------------------------------------------ 2

double path_difference(const std::vector<ScheduleEntry>& schedule) {
  ScenarioConfig sc = ScenarioConfig::desk();
  sc.width = sc.height = 6;
  sc.water.center_x = sc.water.center_y = 3.0;
  sc.water.radius = 2.0;
  sc.schedule = schedule;
  sc.history_frames = 8;
  const Problem p = make_problem(sc, 2);
  const auto dist =
      fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0, fuse_config(true, EnginePath::kDistributed, 0));
  const auto dense =
      fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0, fuse_config(true, EnginePath::kDense, 0));
  double worst = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    worst = std::max(worst, field_rmse(dist[k].belief.mean, dense[k].belief.mean));
  }
  return worst;
}

Outcome distributed_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const double fine = path_difference({{0, Modality::kFine},
                                       {4, Modality::kFine},
                                       {8, Modality::kFine},
                                       {12, Modality::kFine},
                                       {16, Modality::kFine}});
  const double coarse = path_difference({{0, Modality::kFine},
                                         {4, Modality::kCoarse},
                                         {8, Modality::kCoarse},
                                         {12, Modality::kFine},
                                         {16, Modality::kCoarse}});
  const double secs = seconds_since(t0);
  return {fine < kFineFidelityTol && coarse < kCoarseFidelityTol && secs < kFidelitySeconds,
          "FINE-only " + fmt(fine) + " (< " + fmt(kFineFidelityTol) + "), with COARSE " + fmt(coarse) + " (< " +
              fmt(kCoarseFidelityTol) + "), " + fmt(secs) + " s"};
}

// ------------------------------------------------------------------ 3

Outcome outlier_suppression() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kCloudStep = 2;
  ScenarioConfig sc = ScenarioConfig::desk();
  sc.clouds = {{kCloudStep, 0, 0, 9, 9, 0.3}};
  const NoiseModel coarse = noise_preset(sc.noise_preset, sc.bands).coarse;
  const double max_std = std::sqrt(coarse.pixel_covariance().diagonal().maxCoeff());
  const bool offset_ok = sc.clouds[0].magnitude >= kCloudNoiseMultiple * max_std;

  double robust_rmse = 0.0;
  double plain_rmse = 0.0;
  double z_bad = 0.0;
  double z_good = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const Problem p = make_problem(sc, static_cast<std::uint64_t>(seed));
    const auto robust = fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0,
                                      fuse_config(true, EnginePath::kDistributed, seed));
    const auto plain = fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0,
                                     fuse_config(false, EnginePath::kDistributed, seed));
    robust_rmse += step_rmse(p, robust, kCloudStep) / kSeeds;
    plain_rmse += step_rmse(p, plain, kCloudStep) / kSeeds;
    double bad = 0.0;
    double good = 0.0;
    std::size_t n_bad = 0;
    std::size_t n_good = 0;
    for (std::size_t k = 1; k < robust.size(); ++k) {
      const auto mask = cloud_mask(p.obs[k], sc.clouds, static_cast<int>(k));
      const Eigen::VectorXd& z = robust[k].outliers.z_mean;
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (mask[static_cast<std::size_t>(i)]) {
          bad += z[i];
          ++n_bad;
        } else {
          good += z[i];
          ++n_good;
        }
      }
    }
    z_bad += bad / static_cast<double>(n_bad) / kSeeds;
    z_good += good / static_cast<double>(n_good) / kSeeds;
  }
  const double ratio = robust_rmse / plain_rmse;
  const double secs = seconds_since(t0);
  return {offset_ok && ratio <= kCloudRmseRatio && z_bad < kContaminatedZ && z_good > kCleanZ && secs < kCloudSeconds,
          "offset/std " + fmt(sc.clouds[0].magnitude / max_std) + ", RMSE ratio " + fmt(ratio) + " (<= " +
              fmt(kCloudRmseRatio) + "), z contaminated " + fmt(z_bad) + " (< " + fmt(kContaminatedZ) + "), z clean " +
              fmt(z_good) + " (> " + fmt(kCleanZ) + "), " + fmt(secs) + " s"};
}

// ------------------------------------------------------------------ 4

Outcome no_outlier_regression() {
  double robust_rmse = 0.0;
  double plain_rmse = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const Problem p = make_problem(ScenarioConfig::desk(), static_cast<std::uint64_t>(seed));
    robust_rmse += average_rmse(p, fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0,
                                                 fuse_config(true, EnginePath::kDistributed, seed)));
    plain_rmse += average_rmse(p, fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0,
                                                fuse_config(false, EnginePath::kDistributed, seed)));
  }
  const double excess = robust_rmse / plain_rmse - 1.0;
  return {excess < kRobustOverhead, "robust " + fmt(robust_rmse / kSeeds) + " vs non-robust " +
                                        fmt(plain_rmse / kSeeds) + ", excess " + fmt(100 * excess) + "% (< " +
                                        fmt(100 * kRobustOverhead) + "%)"};
}

// ------------------------------------------------------------------ 5

Outcome neural_benefit() {
  const auto t0 = std::chrono::steady_clock::now();
  const ScenarioConfig sc = ScenarioConfig::drifting();
  double rw_rmse = 0.0;
  double nn_rmse = 0.0;
  std::ostringstream per_seed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const Problem p = make_problem(sc, static_cast<std::uint64_t>(seed));
    const auto hist = generate_history(sc, static_cast<std::uint64_t>(seed));
    TrainConfig tc;
    tc.optimizer = Optimizer::kAdam;
    tc.learning_rate = 3e-3;
    tc.epochs = 100;
    tc.seed = static_cast<std::uint64_t>(seed);
    const auto trained = train(make_training_pairs(hist, p.q0, 0), sc.dims(), tc);
    const FuseConfig fc = fuse_config(true, EnginePath::kDistributed, seed);
    const double rw = average_rmse(p, fuse_sequence(p.init, p.rest, TransitionModel::random_walk(), p.q0, 0, fc));
    const double nn = average_rmse(p, fuse_sequence(p.init, p.rest, TransitionModel::neural(trained.params), p.q0, 0, fc));
    rw_rmse += rw / kSeeds;
    nn_rmse += nn / kSeeds;
    per_seed << (seed ? " " : "") << fmt(100 * (1.0 - nn / rw)) << "%";
  }
  const double gain = 1.0 - nn_rmse / rw_rmse;
  const double secs = seconds_since(t0);
  return {gain >= kNeuralGain && secs < kNeuralSeconds,
          "NN " + fmt(nn_rmse) + " vs RW " + fmt(rw_rmse) + ", gain " + fmt(100 * gain) + "% (>= " +
              fmt(100 * kNeuralGain) + "%; per seed " + per_seed.str() + "), " + fmt(secs) + " s"};
}

// ------------------------------------------------------------------ 6

Outcome gradient_check() {
  ScenarioConfig sc = ScenarioConfig::drifting();
  sc.width = sc.height = 9;
  sc.water.center_x = sc.water.center_y = 4.5;
  sc.water.radius = 3.0;
  sc.history_frames = 6;
  const auto hist = generate_history(sc, 4);
  std::vector<std::int32_t> dates;
  for (const auto& h : hist) dates.push_back(h.date);
  const auto q0 = vectorize_state(compute_q0(hist, dates), sc.dims());
  const auto pairs = make_training_pairs(hist, q0, 0);
  auto params = DynamicsParams::init(sc.dims(), 4, 4, 3);
  params.q0_channel_scale = 1.0 / q0.mean();
  params.mean_head.affine_weight = 0.5;
  params.var_head.affine_weight = 0.5;
  params.w1 = 0.8;
  params.w2 = 0.3;
  const Regularization reg;
  Eigen::VectorXd grad;
  objective_and_gradient(params, pairs, reg, &grad);
  const Eigen::VectorXd theta = params.flatten();

  std::mt19937_64 rng(6);
  std::uniform_int_distribution<Eigen::Index> pick(0, theta.size() - 1);
  std::set<Eigen::Index> coords;
  while (coords.size() < 50) coords.insert(pick(rng));
  constexpr double kStep = 1e-6;
  // Floor for coordinates whose gradient is exactly zero (inactive ReLU units).
  constexpr double kScaleFloor = 1e-8;
  double worst = 0.0;
  for (Eigen::Index i : coords) {
    Eigen::VectorXd up = theta;
    Eigen::VectorXd down = theta;
    up[i] += kStep;
    down[i] -= kStep;
    DynamicsParams a = params;
    DynamicsParams b = params;
    a.unflatten(up);
    b.unflatten(down);
    const double fd = (nll_objective(a, pairs, reg) - nll_objective(b, pairs, reg)) / (2 * kStep);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), kScaleFloor}));
  }
  return {worst < kGradientTol, "50 coordinates of " + std::to_string(theta.size()) + ", max relative error " +
                                    fmt(worst) + " (< " + fmt(kGradientTol) + ")"};
}

// ------------------------------------------------------------------ 7

SmallMatrix brute_force_precision(const SmallVector& z, const SmallMatrix& r) {
  const int l = static_cast<int>(z.size());
  SmallMatrix out = SmallMatrix::Zero(l, l);
  for (int mask = 0; mask < (1 << l); ++mask) {
    double w = 1.0;
    std::vector<int> on;
    for (int i = 0; i < l; ++i) {
      const bool bit = (mask >> i) & 1;
      w *= bit ? z[i] : 1.0 - z[i];
      if (bit) on.push_back(i);
    }
    if (on.empty()) continue;
    Eigen::MatrixXd sub(on.size(), on.size());
    for (std::size_t a = 0; a < on.size(); ++a) {
      for (std::size_t b = 0; b < on.size(); ++b) sub(a, b) = r(on[a], on[b]);
    }
    const Eigen::MatrixXd inv = sub.inverse();
    for (std::size_t a = 0; a < on.size(); ++a) {
      for (std::size_t b = 0; b < on.size(); ++b) out(on[a], on[b]) += w * inv(a, b);
    }
  }
  return out;
}

Outcome variational_identities() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // q0: per-day variance around the mean, scaled by the median gap.
  {
    const ImageDims d{1, 1, 2};
    auto frame = [&](double a, double b, std::int32_t date) {
      GridImage g(d, date, Modality::kFine);
      g.data = {a, b};
      return g;
    };
    const auto same = compute_q0({frame(0.3, 0.1, 0), frame(0.3, 0.1, 4)}, {0, 4});
    expect(same.data[0] == 0.0 && same.data[1] == 0.0, "q0 constant");
    const auto step = compute_q0({frame(0.0, 0.0, 0), frame(2.0, 4.0, 1)}, {0, 1});
    expect(std::abs(step.data[0] - 1.0) < 1e-15 && std::abs(step.data[1] - 4.0) < 1e-15, "q0 two frames");
    const auto gap = compute_q0({frame(0.0, 1.0, 0), frame(2.0, 1.0, 4), frame(4.0, 1.0, 8)}, {0, 4, 8});
    expect(std::abs(gap.data[0] - 8.0 / 12.0) < 1e-15 && gap.data[1] == 0.0, "q0 median gap");
  }

  // e_t + f_t = e0 + f0 + 1 for every indicator.
  {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd z(200);
    for (auto& v : z) v = u(rng);
    Eigen::VectorXd e;
    Eigen::VectorXd f;
    update_pi(z, 0.98, 0.02, e, f);
    const double err = ((e + f).array() - 2.0).abs().maxCoeff();
    const double ez = (e.array() - 0.98 - z.array()).abs().maxCoeff();
    expect(err < 1e-15 && ez < 1e-15, "e/f conservation");
  }

  double enum_err = 0.0;
  {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 500; ++t) {
      SmallMatrix a(2, 2);
      a << u(rng), u(rng), u(rng), u(rng);
      const SmallMatrix r = a * a.transpose() + 0.1 * SmallMatrix::Identity(2, 2);
      SmallVector z(2);
      z << u(rng), u(rng);
      if (t % 5 == 0) z[t % 2] = (t % 3) ? 1.0 : 0.0;
      const SmallMatrix got = expected_precision_block(z, r);
      const SmallMatrix want = brute_force_precision(z, r);
      enum_err = std::max(enum_err, (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff()));
    }
    expect(enum_err < kEnumerationTol, "expected precision enumeration");
  }

  double psi_err = 0.0;
  {
    const std::vector<std::pair<double, double>> refs{{1.0, -0.57721566490153286061},
                                                      {0.5, -1.9635100260214234794},
                                                      {0.02, -50.544789310456178747},
                                                      {0.98, -0.61060399681541531469},
                                                      {0.001, -1000.5755719318102797},
                                                      {2.5, 0.70315664064524318723},
                                                      {10.0, 2.2517525890667211076},
                                                      {100.0, 4.6001618527380874002}};
    for (const auto& [x, want] : refs) psi_err = std::max(psi_err, std::abs(digamma(x) - want));
    expect(psi_err < kDigammaTol, "digamma references");
  }

  double cub_err = 0.0;
  {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int n : {1, 2, 4}) {
      SmallVector m(n);
      SmallMatrix a(n, n);
      for (int i = 0; i < n; ++i) {
        m[i] = g(rng);
        for (int j = 0; j < n; ++j) a(i, j) = g(rng);
      }
      const SmallMatrix cov = a * a.transpose() + 0.5 * SmallMatrix::Identity(n, n);
      const CubatureSet set = cubature_points(m, cov);
      SmallVector mean = SmallVector::Zero(n);
      SmallMatrix second = SmallMatrix::Zero(n, n);
      double weights = 0.0;
      for (const auto& x : set.points) {
        weights += set.weight;
        mean += set.weight * x;
      }
      for (const auto& x : set.points) second += set.weight * (x - m) * (x - m).transpose();
      cub_err = std::max({cub_err, std::abs(weights - 1.0), (mean - m).cwiseAbs().maxCoeff(),
                          (second - cov).cwiseAbs().maxCoeff() / cov.cwiseAbs().maxCoeff()});
      expect(set.points.size() == static_cast<std::size_t>(2 * n), "cubature point count");
    }
    expect(cub_err < kCubatureTol, "cubature moments");
  }

  std::string detail = "enumeration " + fmt(enum_err) + ", digamma " + fmt(psi_err) + ", cubature " + fmt(cub_err);
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

// ------------------------------------------------------------------ 8

GridImage image(int w, int h, std::vector<double> data) {
  GridImage img({w, h, static_cast<int>(data.size() / (static_cast<std::size_t>(w) * h))}, 0, Modality::kLatent);
  img.data = std::move(data);
  return img;
}

std::vector<std::uint8_t> threshold_oracle(const std::vector<double>& v) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  double best = 1e300;
  double thr = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    double m0 = 0.0;
    double m1 = 0.0;
    for (std::size_t i = 0; i < k; ++i) m0 += s[i];
    for (std::size_t i = k; i < n; ++i) m1 += s[i];
    m0 /= static_cast<double>(k);
    m1 /= static_cast<double>(n - k);
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) sse += i < k ? (s[i] - m0) * (s[i] - m0) : (s[i] - m1) * (s[i] - m1);
    if (sse < best) {
      best = sse;
      thr = 0.5 * (s[k - 1] + s[k]);
    }
  }
  std::vector<std::uint8_t> out;
  for (double x : v) out.push_back(x > thr ? 1 : 0);
  return out;
}

Outcome metric_identities() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  expect(rmse(image(2, 1, {0.3, 0.4}), image(2, 1, {0.3, 0.4})) == 0.0, "rmse identical");
  expect(std::abs(rmse(image(2, 1, {0.0, 0.2}), image(2, 1, {0.0, 0.0})) - std::sqrt(0.02)) < 1e-15, "rmse 0.1414");
  expect(std::abs(rmse(image(1, 1, {0.1, 0.5}), image(1, 1, {0.4, 0.1})) - std::sqrt(0.125)) < 1e-15,
         "rmse two bands");

  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i < 40 ? 0.05 : 0.4;
  expect(misclassification(image(10, 10, v), image(10, 10, v)) == 0.0, "mp identical");
  auto flipped = v;
  flipped[3] = 0.4;
  expect(misclassification(image(10, 10, flipped), image(10, 10, v)) == 1.0, "mp one flip");
  flipped[77] = 0.05;
  expect(misclassification(image(10, 10, flipped), image(10, 10, v)) == 2.0, "mp two flips");

  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> spread_u(-1.0, 1.0);
  int mismatches = 0;
  constexpr int kToys = 1000;
  for (int t = 0; t < kToys; ++t) {
    const double c0 = 0.5 * u(rng);
    const double gap = 0.15 + 0.35 * u(rng);
    const double spread = 0.005 + (gap / 8.0 - 0.005) * u(rng);
    const int n0 = 3 + static_cast<int>(11 * u(rng));
    std::vector<double> toy;
    for (int i = 0; i < 16; ++i) toy.push_back(i < n0 ? c0 + spread * spread_u(rng) : c0 + gap + spread * spread_u(rng));
    std::shuffle(toy.begin(), toy.end(), rng);
    mismatches += kmeans2(image(4, 4, toy)).labels != threshold_oracle(toy);
  }
  expect(mismatches == 0, "kmeans toys");
  std::string detail = "kmeans vs threshold oracle: " + std::to_string(kToys - mismatches) + "/" +
                       std::to_string(kToys) + " exact partitions";
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

// ------------------------------------------------------------------ 9

int run_cli(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool run_pipeline(const fs::path& dir, const std::string& config_text) {
  fs::create_directories(dir);
  io::write_file_atomic(dir / "config.json", config_text);
  const std::string c = " --config " + (dir / "config.json").string();
  const std::string d = dir.string();
  return run_cli("simulate" + c + " --out " + d + "/sim") == 0 &&
         run_cli("train-dynamics" + c + " --history " + d + "/sim/history.json --out " + d + "/weights.rfw") == 0 &&
         run_cli("fuse" + c + " --manifest " + d + "/sim/observations.json --weights " + d + "/weights.rfw --out " + d +
                 "/fused") == 0 &&
         run_cli("evaluate" + c + " --est " + d + "/fused --truth " + d + "/sim/truth --out " + d +
                 "/metrics.csv --maps " + d + "/maps") == 0 &&
         run_cli("export-pgm --raster " + d + "/fused/mean_006.rfr --band 1 --out " + d + "/mean_006.pgm") == 0;
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_file_bytes(e.path());
  }
  return files;
}

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = fs::temp_directory_path() / ("rfuse_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::vector<std::pair<std::string, std::string>> configs{
      {"robust_rw",
       R"({"seed": 3, "scenario": {"clouds": [{"step": 5, "x": 0, "y": 0, "w": 4, "h": 4, "magnitude": 0.3}]}})"},
      {"neural",
       R"({"seed": 4, "scenario": {"preset": "drifting"},
           "dynamics": {"variant": "NN", "train": {"optimizer": "adam", "learning_rate": 0.003, "epochs": 3}}})"},
      {"dense",
       R"({"seed": 5, "scenario": {"width": 9, "height": 9, "water": {"center_x": 4.5, "center_y": 4.5, "radius": 3.0}},
           "engine": {"path": "dense"}})"}};
  std::size_t compared = 0;
  std::vector<std::string> failures;
  for (const auto& [name, text] : configs) {
    const fs::path a = root / name / "a";
    const fs::path b = root / name / "b";
    ::unsetenv("RFUSE_THREADS");
    const bool ok_a = run_pipeline(a, text);
    // The rerun also changes the worker count, which must not change any output.
    ::setenv("RFUSE_THREADS", "3", 1);
    const bool ok_b = run_pipeline(b, text);
    ::unsetenv("RFUSE_THREADS");
    if (!ok_a || !ok_b) {
      failures.push_back(name + ": pipeline failed");
      continue;
    }
    auto sa = snapshot(a);
    auto sb = snapshot(b);
    sa.erase("config.json");
    sb.erase("config.json");
    if (sa != sb) failures.push_back(name + ": outputs differ");
    compared += sa.size();
  }
  fs::remove_all(root);
  std::string detail =
      std::to_string(configs.size()) + " pipelines, " + std::to_string(compared) + " files byte-identical on rerun, " +
      fmt(seconds_since(t0)) + " s";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <rfuse-cli> [criteria...]\n", argv[0]);
    return 2;
  }
  g_cli = argv[1];
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"Kalman oracle equivalence", kalman_oracle},
      {"distributed fidelity", distributed_fidelity},
      {"outlier suppression", outlier_suppression},
      {"no-outlier regression", no_outlier_regression},
      {"NN benefit", neural_benefit},
      {"gradient correctness", gradient_check},
      {"variational unit identities", variational_identities},
      {"metric identities", metric_identities},
      {"determinism", determinism}};
  std::set<int> selected;
  for (int i = 2; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    failed += !out.pass;
    std::printf("%s %d %s: %s\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), out.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
