#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rfuse/distributed.hpp"
#include "rfuse/errors.hpp"
#include "rfuse/scene.hpp"

#include <cmath>
#include <cstdlib>
#include <random>

using namespace rfuse;

namespace {

Eigen::VectorXd uniform(Eigen::Index n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

GaussianBelief random_belief(ImageDims d, std::mt19937_64& rng, double scale) {
  GaussianBelief b;
  b.mean = uniform(static_cast<Eigen::Index>(d.size()), 0.2, 0.6, rng);
  b.cov.block_size = d.bands;
  for (std::size_t g = 0; g < d.pixels(); ++g) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(d.bands, d.bands);
    b.cov.blocks.push_back(scale * (a * a.transpose() + 0.2 * Eigen::MatrixXd::Identity(d.bands, d.bands)));
  }
  return b;
}

Observation make_obs(const DegradationOperator& op, const NoiseModel& noise, const Eigen::VectorXd& s,
                     std::mt19937_64& rng, std::int32_t date, std::int32_t delta) {
  Observation o;
  o.op = op;
  o.modality = op.modality();
  o.noise = noise;
  o.date = date;
  o.delta_days = delta;
  o.y = op.apply(s);
  const SmallMatrix l = noise.pixel_covariance().llt().matrixL();
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t nb = op.footprint_count();
  for (std::size_t c = 0; c < nb; ++c) {
    SmallVector e(op.bands());
    for (auto& x : e) x = n(rng);
    const SmallVector w = l * e;
    for (int b = 0; b < op.bands(); ++b) o.y[op.measurement_index(c, b)] += w[b];
  }
  return o;
}

}  // namespace

TEST_CASE("unit cubature points") {
  const auto c = unit_cubature(2);
  REQUIRE(c.points.size() == 4);
  CHECK(c.weight == 0.25);
  const double r = std::sqrt(2.0);
  const double expect[4][2] = {{r, 0.0}, {-r, 0.0}, {0.0, r}, {0.0, -r}};
  for (const auto& e : expect) {
    int found = 0;
    for (const auto& p : c.points) found += std::abs(p[0] - e[0]) < 1e-15 && std::abs(p[1] - e[1]) < 1e-15;
    CHECK(found == 1);
  }
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  for (const auto& p : c.points) m += c.weight * p * p.transpose();
  CHECK((m - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("cubature moment identities") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const int n = 1 + t % 4;
    const SmallVector mean = uniform(n, -1.0, 1.0, rng);
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(n, n);
    const SmallMatrix cov = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    const auto c = cubature_points(mean, cov);
    CHECK(c.points.size() == static_cast<std::size_t>(2 * n));
    SmallVector m = SmallVector::Zero(n);
    for (const auto& p : c.points) m += c.weight * p;
    SmallMatrix s = SmallMatrix::Zero(n, n);
    for (const auto& p : c.points) s += c.weight * (p - mean) * (p - mean).transpose();
    CHECK((m - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((s - cov).cwiseAbs().maxCoeff() < 1e-12);
  }
  SmallVector m(2);
  m << 0.3, 0.4;
  const auto degenerate = cubature_points(m, SmallMatrix::Zero(2, 2));
  for (const auto& p : degenerate.points) CHECK((p - m).norm() < 1e-4);
}

TEST_CASE("random-walk prediction") {
  const ImageDims d{3, 3, 2};
  std::mt19937_64 rng(1);
  const auto post = random_belief(d, rng, 1e-3);
  const Eigen::VectorXd q0 = uniform(18, 1e-5, 1e-4, rng);
  const auto u = AuxInput::make(d, q0, 0, 8, 8.0);
  const auto prior = predict_distributed(post, TransitionModel::random_walk(), u, {}, 1);
  CHECK(prior.mean == post.mean);
  for (std::size_t g = 0; g < 9; ++g) {
    SmallMatrix expect = post.cov.blocks[g];
    for (int b = 0; b < 2; ++b) expect(b, b) += 8.0 * q0[static_cast<Eigen::Index>(2 * g + b)];
    CHECK((prior.cov.blocks[g] - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("zero network predicts like the random walk") {
  const ImageDims d{4, 4, 2};
  std::mt19937_64 rng(2);
  const auto post = random_belief(d, rng, 1e-4);
  const Eigen::VectorXd q0 = uniform(32, 1e-5, 1e-4, rng);
  const auto u = AuxInput::make(d, q0, 0, 4, 4.0);
  const auto rw = predict_distributed(post, TransitionModel::random_walk(), u, {}, 1);
  const auto nn = predict_distributed(post, TransitionModel::neural(DynamicsParams::zeros(d, 3, 3)), u, {}, 1);
  CHECK((rw.mean - nn.mean).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t g = 0; g < 16; ++g) CHECK((rw.cov.blocks[g] - nn.cov.blocks[g]).cwiseAbs().maxCoeff() < 1e-12);

  const auto dense = predict_dense(to_dense(post), TransitionModel::neural(DynamicsParams::zeros(d, 3, 3)), u);
  CHECK((dense.mean - rw.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((to_block(dense, 2).cov.to_dense() - rw.cov.to_dense()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample count changes only the Monte-Carlo error") {
  const ImageDims d{3, 3, 2};
  std::mt19937_64 rng(4);
  const auto post = random_belief(d, rng, 1e-2);
  const Eigen::VectorXd q0 = uniform(18, 1e-4, 1e-3, rng);
  auto p = DynamicsParams::init(d, 5, 4, 3);
  p.mean_head.affine_weight = 0.5;
  p.mean_head.affine_bias = -0.05;
  const auto model = TransitionModel::neural(p);
  const auto u = AuxInput::make(d, q0, 0, 4, 4.0);
  const int seeds = 30;
  Eigen::MatrixXd m1(18, seeds);
  for (int s = 0; s < seeds; ++s) {
    EngineConfig cfg;
    cfg.n_samples = 1;
    cfg.seed = static_cast<std::uint64_t>(s);
    m1.col(s) = predict_distributed(post, model, u, cfg, 1).mean;
  }
  EngineConfig big;
  big.n_samples = 64;
  big.seed = 1000;
  const Eigen::VectorXd m64 = predict_distributed(post, model, u, big, 1).mean;
  const Eigen::VectorXd avg = m1.rowwise().mean();
  for (Eigen::Index i = 0; i < 18; ++i) {
    const double var = (m1.row(i).array() - avg[i]).square().sum() / (seeds - 1);
    const double se = std::sqrt(var / seeds + var / 64.0);
    CHECK(std::abs(avg[i] - m64[i]) <= 3.0 * se + 1e-15);
  }
}

TEST_CASE("prediction is deterministic and independent of the worker count") {
  const ImageDims d{5, 5, 2};
  std::mt19937_64 rng(6);
  const auto post = random_belief(d, rng, 1e-3);
  const Eigen::VectorXd q0 = uniform(50, 1e-4, 1e-3, rng);
  const auto model = TransitionModel::neural(DynamicsParams::init(d, 2, 3, 3));
  const auto u = AuxInput::make(d, q0, 0, 4, 4.0);
  EngineConfig cfg;
  cfg.seed = 77;
  setenv("RFUSE_THREADS", "1", 1);
  const auto a = predict_distributed(post, model, u, cfg, 3);
  setenv("RFUSE_THREADS", "3", 1);
  const auto b = predict_distributed(post, model, u, cfg, 3);
  unsetenv("RFUSE_THREADS");
  CHECK(a.mean == b.mean);
  for (std::size_t g = 0; g < 25; ++g) CHECK(a.cov.blocks[g] == b.cov.blocks[g]);
  const auto other_step = predict_distributed(post, model, u, cfg, 4);
  CHECK(other_step.mean != a.mean);
}

TEST_CASE("FINE update equals the dense Kalman update") {
  const ImageDims d{4, 4, 2};
  std::mt19937_64 rng(8);
  const auto prior = random_belief(d, rng, 1e-3);
  const auto op = DegradationOperator::fine(d);
  const NoiseModel noise = noise_preset("oroville", 2).coarse;
  const auto obs = make_obs(op, noise, prior.mean, rng, 4, 4);
  const auto prec = expected_precision(Eigen::VectorXd::Ones(32), noise, 16);
  const auto block = update_distributed(prior, obs, prec);

  const Eigen::MatrixXd h = op.dense_matrix();
  const Eigen::MatrixXd p = prior.cov.to_dense();
  const Eigen::MatrixXd s = h * p * h.transpose() + noise.dense(16);
  const Eigen::MatrixXd k = p * h.transpose() * s.inverse();
  const Eigen::VectorXd mean = prior.mean + k * (obs.y - h * prior.mean);
  const Eigen::MatrixXd cov = p - k * h * p;
  CHECK((block.mean - mean).cwiseAbs().maxCoeff() < 1e-8);
  for (std::size_t g = 0; g < 16; ++g) {
    const auto gi = static_cast<Eigen::Index>(2 * g);
    CHECK((Eigen::MatrixXd(block.cov.blocks[g]) - cov.block(gi, gi, 2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("vanishing indicators return the prior") {
  const ImageDims d{6, 6, 2};
  std::mt19937_64 rng(9);
  const auto prior = random_belief(d, rng, 1e-3);
  const auto op = DegradationOperator::coarse(d, 3);
  const NoiseModel noise = noise_preset("oroville", 2).coarse;
  Eigen::VectorXd truth = prior.mean;
  truth.array() += 0.2;
  const auto obs = make_obs(op, noise, truth, rng, 4, 4);
  const auto prec = expected_precision(Eigen::VectorXd::Constant(8, 1e-6), noise, 4);
  const auto post = update_distributed(prior, obs, prec);
  CHECK((post.mean - prior.mean).norm() <= 1e-4 * prior.mean.norm());
}

TEST_CASE("a uniform footprint receives a uniform correction") {
  const ImageDims d{9, 9, 2};
  GaussianBelief prior;
  prior.mean = Eigen::VectorXd::Constant(162, 0.3);
  prior.cov = BlockCovariance::replicate(81, 1e-3 * p0_preset("oroville", 2));
  const auto op = DegradationOperator::coarse(d, 9);
  Observation obs;
  obs.op = op;
  obs.modality = Modality::kCoarse;
  obs.noise = noise_preset("desk", 2).coarse;
  obs.y = Eigen::VectorXd(2);
  obs.y << 0.35, 0.27;
  const auto post = update_distributed(prior, obs, expected_precision(Eigen::VectorXd::Ones(2), obs.noise, 1));
  for (std::size_t g = 1; g < 81; ++g) {
    for (int b = 0; b < 2; ++b) {
      CHECK(post.mean[static_cast<Eigen::Index>(2 * g + b)] == doctest::Approx(post.mean[b]).epsilon(1e-13));
    }
  }
  CHECK(post.mean[0] > 0.3);
  CHECK(post.mean[1] < 0.3);
}

TEST_CASE("fuse_sequence with no observations returns the initialization") {
  const ImageDims d{3, 3, 2};
  GridImage init(d, 0, Modality::kFine);
  std::fill(init.data.begin(), init.data.end(), 0.25);
  FuseConfig cfg;
  cfg.p0_block = p0_preset("oroville", 2);
  const auto steps = fuse_sequence(init, {}, TransitionModel::random_walk(), Eigen::VectorXd::Ones(18), 0, cfg);
  REQUIRE(steps.size() == 1);
  CHECK(steps[0].belief.mean == vectorize_state(init, d));
  CHECK(steps[0].belief.cov.blocks[0](0, 0) == doctest::Approx(1e-10));
}

TEST_CASE("distributed and dense paths agree on FINE sequences") {
  ScenarioConfig sc = ScenarioConfig::desk();
  sc.width = sc.height = 6;
  sc.water.center_x = sc.water.center_y = 3.0;
  sc.water.radius = 2.0;
  sc.schedule = {{0, Modality::kFine}, {4, Modality::kFine}, {8, Modality::kFine}, {12, Modality::kFine},
                 {16, Modality::kFine}};
  sc.history_frames = 6;
  const auto scene = generate_scene(sc, 1);
  const auto hist = generate_history(sc, 1);
  std::vector<std::int32_t> dates;
  for (const auto& h : hist) dates.push_back(h.date);
  const auto q0 = vectorize_state(compute_q0(hist, dates), sc.dims());
  const auto obs = observe_schedule(scene, sc, 1);
  const GridImage init = measurement_to_image(obs[0].y, obs[0].op, 0);
  const std::vector<Observation> rest(obs.begin() + 1, obs.end());
  FuseConfig cfg;
  cfg.p0_block = p0_preset("oroville", 2);
  const auto dist = fuse_sequence(init, rest, TransitionModel::random_walk(), q0, 0, cfg);
  cfg.engine.path = EnginePath::kDense;
  const auto dense = fuse_sequence(init, rest, TransitionModel::random_walk(), q0, 0, cfg);
  REQUIRE(dist.size() == 5);
  for (std::size_t k = 0; k < dist.size(); ++k) {
    CHECK((dist[k].belief.mean - dense[k].belief.mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(dist[k].iterations == dense[k].iterations);
  }
  cfg.engine.path = EnginePath::kDistributed;
  const auto again = fuse_sequence(init, rest, TransitionModel::random_walk(), q0, 0, cfg);
  for (std::size_t k = 0; k < dist.size(); ++k) CHECK(again[k].belief.mean == dist[k].belief.mean);
}

TEST_CASE("engine config validation") {
  EngineConfig cfg;
  cfg.n_samples = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK(engine_path_from_string("dense") == EnginePath::kDense);
  CHECK_THROWS_AS(engine_path_from_string("gpu"), ValidationError);
}
