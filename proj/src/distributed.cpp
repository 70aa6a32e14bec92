#include "rfuse/distributed.hpp"

#include "rfuse/errors.hpp"
#include "rfuse/parallel.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace rfuse {

CubatureSet unit_cubature(int n) {
  if (n < 1) throw ValidationError("cubature dimension must be >= 1");
  CubatureSet set;
  set.weight = 1.0 / (2.0 * n);
  const double r = std::sqrt(static_cast<double>(n));
  for (int sign : {1, -1}) {
    for (int i = 0; i < n; ++i) {
      SmallVector p = SmallVector::Zero(n);
      p[i] = sign * r;
      set.points.push_back(p);
    }
  }
  return set;
}

CubatureSet cubature_points(const SmallVector& mean, const SmallMatrix& cov) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw DimensionError("cubature covariance does not match mean");
  }
  const SmallMatrix l = cholesky_with_jitter(cov);
  CubatureSet set = unit_cubature(static_cast<int>(mean.size()));
  for (auto& p : set.points) p = (l * p + mean).eval();
  return set;
}

std::string_view to_string(EnginePath p) { return p == EnginePath::kDense ? "dense" : "distributed"; }

EnginePath engine_path_from_string(std::string_view name) {
  if (name == "dense") return EnginePath::kDense;
  if (name == "distributed") return EnginePath::kDistributed;
  throw ValidationError("unknown engine path: " + std::string(name));
}

void EngineConfig::validate() const {
  if (n_samples < 1) throw ValidationError("engine.n_samples must be >= 1");
}

namespace {

void check_belief(const GaussianBelief& b, const ImageDims& dims) {
  if (b.mean.size() != static_cast<Eigen::Index>(dims.size()) || b.cov.size() != dims.pixels() ||
      b.cov.block_size != dims.bands) {
    throw DimensionError("belief does not match scene dimensions");
  }
}

/// Standard normal draws for pixel p at a given step: n_samples consecutive L-vectors.
std::vector<double> pixel_normals(std::uint64_t seed, std::size_t step, std::size_t pixel, int count) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(pixel), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(count));
  for (auto& v : out) v = normal(rng);
  return out;
}

GaussianBelief predict_random_walk(const GaussianBelief& post, const AuxInput& u) {
  GaussianBelief prior = post;
  const int bands = post.cov.block_size;
  for (std::size_t g = 0; g < post.cov.size(); ++g) {
    for (int b = 0; b < bands; ++b) {
      const auto e = static_cast<Eigen::Index>(state_index(g, b, bands));
      prior.cov.blocks[g](b, b) += std::max(u.delta_days * u.q0[e], kVarianceFloor);
    }
  }
  return prior;
}

}  // namespace

GaussianBelief predict_distributed(const GaussianBelief& post, const TransitionModel& model, const AuxInput& u,
                                   const EngineConfig& config, std::size_t step) {
  config.validate();
  u.validate();
  check_belief(post, u.dims);
  if (model.variant() == DynamicsVariant::kRandomWalk) return predict_random_walk(post, u);

  const DynamicsParams& params = model.params();
  const int bands = u.dims.bands;
  const std::size_t groups = u.dims.pixels();
  const int n_samples = config.n_samples;

  std::vector<SmallMatrix> chol(groups);
  parallel_for(groups, [&](std::size_t g) { chol[g] = cholesky_with_jitter(post.cov.blocks[g]); });

  const CubatureSet unit = unit_cubature(bands);
  const std::size_t n_points = unit.points.size();
  const std::size_t n_eval = n_points * static_cast<std::size_t>(n_samples);

  // Complement samples: row j is a full-state draw from the block-diagonal posterior.
  Eigen::MatrixXd samples(post.mean.size(), n_samples);
  parallel_for(groups, [&](std::size_t g) {
    const auto eps = pixel_normals(config.seed, step, g, n_samples * bands);
    for (int j = 0; j < n_samples; ++j) {
      const Eigen::Map<const Eigen::VectorXd> e(eps.data() + static_cast<std::size_t>(j) * bands, bands);
      samples.col(j).segment(static_cast<Eigen::Index>(g) * bands, bands) =
          post.mean.segment(static_cast<Eigen::Index>(g) * bands, bands) + chol[g] * e;
    }
  });

  // mu and sigma^2 for every (group, sample, cubature point).
  std::vector<double> mu(groups * n_eval * bands);
  std::vector<double> var(groups * n_eval * bands);
  NeighborhoodEvaluator eval(params, u);
  for (int j = 0; j < n_samples; ++j) {
    eval.set_base(samples.col(j));
    parallel_for(groups, [&](std::size_t g) {
      const SmallVector m = post.mean.segment(static_cast<Eigen::Index>(g) * bands, bands);
      for (std::size_t i = 0; i < n_points; ++i) {
        const SmallVector x = chol[g] * unit.points[i] + m;
        const std::size_t slot = ((g * n_samples + j) * n_points + i) * bands;
        eval.evaluate(g, x.data(), mu.data() + slot, var.data() + slot);
      }
    });
  }

  GaussianBelief prior;
  prior.mean.resize(post.mean.size());
  prior.cov.block_size = bands;
  prior.cov.blocks.assign(groups, SmallMatrix::Zero(bands, bands));
  const double w = 1.0 / static_cast<double>(n_eval);
  parallel_for(groups, [&](std::size_t g) {
    const double* mg = mu.data() + g * n_eval * bands;
    const double* vg = var.data() + g * n_eval * bands;
    SmallVector mean = SmallVector::Zero(bands);
    SmallVector noise = SmallVector::Zero(bands);
    for (std::size_t e = 0; e < n_eval; ++e) {
      for (int b = 0; b < bands; ++b) {
        mean[b] += mg[e * bands + b];
        noise[b] += vg[e * bands + b];
      }
    }
    mean *= w;
    SmallMatrix cov = SmallMatrix::Zero(bands, bands);
    for (std::size_t e = 0; e < n_eval; ++e) {
      const SmallVector d = Eigen::Map<const Eigen::VectorXd>(mg + e * bands, bands) - mean;
      cov += d * d.transpose();
    }
    cov *= w;
    cov.diagonal() += w * noise;
    symmetrize(cov);
    prior.mean.segment(static_cast<Eigen::Index>(g) * bands, bands) = mean;
    prior.cov.blocks[g] = cov;
  });
  if (!prior.mean.allFinite()) throw NumericalError("prediction produced non-finite mean");
  return prior;
}

DenseBelief predict_dense(const DenseBelief& post, const TransitionModel& model, const AuxInput& u) {
  u.validate();
  const auto n = static_cast<Eigen::Index>(u.dims.size());
  if (post.mean.size() != n || post.cov.rows() != n || post.cov.cols() != n) {
    throw DimensionError("belief does not match scene dimensions");
  }
  if (model.variant() == DynamicsVariant::kRandomWalk) {
    DenseBelief prior = post;
    prior.cov.diagonal() += (u.delta_days * u.q0).cwiseMax(kVarianceFloor);
    return prior;
  }
  const Eigen::MatrixXd l = cholesky_with_jitter(post.cov);
  const double r = std::sqrt(static_cast<double>(n));
  std::vector<Eigen::VectorXd> mus(static_cast<std::size_t>(2 * n));
  std::vector<Eigen::VectorXd> vars(static_cast<std::size_t>(2 * n));
  parallel_for(static_cast<std::size_t>(2 * n), [&](std::size_t k) {
    const auto i = static_cast<Eigen::Index>(k) % n;
    const double sign = static_cast<Eigen::Index>(k) < n ? 1.0 : -1.0;
    const Eigen::VectorXd x = post.mean + sign * r * l.col(i);
    mus[k] = model.predict_mean(x, u);
    vars[k] = model.predict_variance(x, u);
  });
  const double w = 1.0 / static_cast<double>(2 * n);
  DenseBelief prior;
  prior.mean = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < mus.size(); ++k) {
    prior.mean += mus[k];
    noise += vars[k];
  }
  prior.mean *= w;
  prior.cov = Eigen::MatrixXd::Zero(n, n);
  for (const auto& m : mus) {
    const Eigen::VectorXd d = m - prior.mean;
    prior.cov.noalias() += d * d.transpose();
  }
  prior.cov *= w;
  prior.cov.diagonal() += w * noise;
  symmetrize(prior.cov);
  return prior;
}

GaussianBelief update_distributed(const GaussianBelief& prior, const Observation& obs,
                                  const std::vector<SmallMatrix>& precision) {
  const DegradationOperator& op = obs.op;
  check_belief(prior, op.hr_dims());
  const std::size_t n_blocks = obs.block_count();
  if (precision.size() != n_blocks) throw DimensionError("precision block count does not match observation");
  const int bands = op.bands();
  const double kw = op.kernel_weight();

  GaussianBelief post = prior;
  parallel_for(n_blocks, [&](std::size_t c) {
    Eigen::LLT<SmallMatrix> prec_llt(precision[c]);
    if (prec_llt.info() != Eigen::Success) throw NumericalError("expected precision block is not positive definite");
    SmallMatrix innov = op.block_covariance(c, prior.cov) + prec_llt.solve(SmallMatrix::Identity(bands, bands));
    symmetrize(innov);
    Eigen::LLT<SmallMatrix> llt(innov);
    if (llt.info() != Eigen::Success) throw NumericalError("innovation block is singular");

    const auto fp = op.footprint(c);
    SmallVector resid(bands);
    for (int b = 0; b < bands; ++b) {
      double hs = 0.0;
      for (std::size_t p : fp) hs += prior.mean[static_cast<Eigen::Index>(state_index(p, b, bands))];
      resid[b] = obs.y[static_cast<Eigen::Index>(op.measurement_index(c, b))] - op.gains()[b] * kw * hs;
    }
    const SmallVector solved = llt.solve(resid);
    for (std::size_t p : fp) {
      // C_p = P_p G w, with G the diagonal gain matrix.
      SmallMatrix cp = prior.cov.blocks[p];
      for (int b = 0; b < bands; ++b) cp.col(b) *= op.gains()[b] * kw;
      post.mean.segment(static_cast<Eigen::Index>(p) * bands, bands) += cp * solved;
      SmallMatrix updated = prior.cov.blocks[p] - cp * llt.solve(cp.transpose());
      symmetrize(updated);
      post.cov.blocks[p] = updated;
    }
  });
  return post;
}

std::vector<SmallMatrix> residual_moments(const GaussianBelief& belief, const Observation& obs) {
  const DegradationOperator& op = obs.op;
  check_belief(belief, op.hr_dims());
  const int bands = op.bands();
  const Eigen::VectorXd pred = op.apply(belief.mean);
  std::vector<SmallMatrix> out(obs.block_count());
  parallel_for(out.size(), [&](std::size_t c) {
    SmallVector r(bands);
    for (int b = 0; b < bands; ++b) {
      const auto i = static_cast<Eigen::Index>(op.measurement_index(c, b));
      r[b] = obs.y[i] - pred[i];
    }
    out[c] = r * r.transpose() + op.block_covariance(c, belief.cov);
  });
  return out;
}

VbResult<GaussianBelief> vbkf_update(const GaussianBelief& prior, const Observation& obs, const VBConfig& config) {
  return detail::run_vb(
      prior, obs, config,
      [](const GaussianBelief& p, const Observation& o, const std::vector<SmallMatrix>& prec) {
        return update_distributed(p, o, prec);
      },
      [](const GaussianBelief& b, const Observation& o) { return residual_moments(b, o); });
}

std::vector<FuseStep> fuse_sequence(const GridImage& init, const std::vector<Observation>& observations,
                                    const TransitionModel& model, const Eigen::VectorXd& q0, int day_of_year_anchor,
                                    const FuseConfig& config) {
  config.vb.validate();
  config.engine.validate();
  if (init.modality != Modality::kFine) throw ValidationError("the initialization image must be FINE");
  const ImageDims dims = init.dims;
  if (config.p0_block.rows() != dims.bands || config.p0_block.cols() != dims.bands) {
    throw DimensionError("P0 block size does not match band count");
  }
  if (!(config.p0_scale > 0.0)) throw ValidationError("p0_scale must be > 0");

  FuseStep first;
  first.date = init.date;
  first.modality = init.modality;
  first.belief.mean = vectorize_state(init, dims);
  first.belief.cov = BlockCovariance::replicate(dims.pixels(), config.p0_scale * config.p0_block);
  std::vector<FuseStep> steps{first};

  const bool dense = config.engine.path == EnginePath::kDense;
  DenseBelief dense_belief;
  if (dense) dense_belief = to_dense(first.belief);
  GaussianBelief belief = first.belief;
  std::int32_t prev_date = init.date;

  for (std::size_t k = 0; k < observations.size(); ++k) {
    const Observation& obs = observations[k];
    if (!(obs.op.hr_dims() == dims)) throw DimensionError("observation operator does not match the scene");
    if (obs.date < prev_date) throw ValidationError("observations must be in date order");
    const auto t0 = std::chrono::steady_clock::now();
    const std::int32_t delta = obs.date - prev_date;

    FuseStep step;
    step.date = obs.date;
    step.modality = obs.modality;
    step.delta_days = delta;
    if (dense) {
      DenseBelief prior = dense_belief;
      if (delta > 0) {
        prior = predict_dense(dense_belief, model, AuxInput::make(dims, q0, day_of_year_anchor, obs.date, delta));
      }
      auto res = vbkf_update(prior, obs, config.vb);
      dense_belief = std::move(res.belief);
      step.belief = to_block(dense_belief, dims.bands);
      step.outliers = std::move(res.outliers);
      step.iterations = res.iterations;
    } else {
      GaussianBelief prior = belief;
      if (delta > 0) {
        const AuxInput u = AuxInput::make(dims, q0, day_of_year_anchor, obs.date, delta);
        prior = predict_distributed(belief, model, u, config.engine, k + 1);
      }
      auto res = vbkf_update(prior, obs, config.vb);
      belief = std::move(res.belief);
      step.belief = belief;
      step.outliers = std::move(res.outliers);
      step.iterations = res.iterations;
    }
    step.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    steps.push_back(std::move(step));
    prev_date = obs.date;
  }
  return steps;
}

std::vector<Observation> load_observations(const SequenceManifest& manifest, const ImageDims& hr,
                                           const NoisePreset& noise, const std::vector<double>& gains) {
  std::vector<Observation> out;
  std::int32_t prev = manifest.entries.empty() ? 0 : manifest.entries.front().date;
  for (std::size_t i = 1; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    if (e.modality == Modality::kLatent) throw ValidationError("manifest entries must be FINE or COARSE");
    const GridImage img = read_raster(manifest.resolve(e));
    if (img.bands() != hr.bands) throw DimensionError("observation band count differs from the scene");
    Observation obs;
    obs.modality = e.modality;
    obs.date = e.date;
    obs.delta_days = e.date - prev;
    if (e.modality == Modality::kFine) {
      obs.op = DegradationOperator::fine(hr, gains);
      obs.noise = noise.fine;
    } else {
      if (img.width() < 1 || hr.width % img.width() != 0 || hr.height % img.height() != 0 ||
          hr.width / img.width() != hr.height / img.height()) {
        throw DimensionError("COARSE raster size is not an integer decimation of the scene");
      }
      obs.op = DegradationOperator::coarse(hr, hr.width / img.width(), gains);
      obs.noise = noise.coarse;
    }
    obs.y = measurement_from_image(img, obs.op);
    obs.validate();
    out.push_back(std::move(obs));
    prev = e.date;
  }
  return out;
}

}  // namespace rfuse
