#include "rfuse/scene.hpp"

#include "rfuse/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace rfuse {

namespace {

std::vector<ScheduleEntry> default_schedule(int steps, int gap) {
  std::vector<ScheduleEntry> s;
  for (int k = 0; k < steps; ++k) {
    s.push_back({k * gap, k % 4 == 0 ? Modality::kFine : Modality::kCoarse});
  }
  return s;
}

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag, std::uint32_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag, index};
  return std::mt19937_64(seq);
}

/// Static per-pixel texture shared by every frame of a seed.
std::vector<double> texture(const ScenarioConfig& cfg, std::uint64_t seed) {
  auto rng = stream(seed, 0x7e47u, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> t(cfg.dims().size());
  for (auto& v : t) v = cfg.texture_std * normal(rng);
  return t;
}

/// Water fraction of pixel (x, y) at `day`.
double water_fraction(const WaterDynamics& w, int x, int y, double day) {
  const double cx = w.center_x + w.drift_x * day;
  const double cy = w.center_y + w.drift_y * day;
  double r = w.radius + w.radius_drift * day;
  if (w.radius_period_days > 0.0) r += w.radius_amplitude * std::sin(2.0 * std::numbers::pi * day / w.radius_period_days);
  const double dist = std::hypot(x - cx, y - cy);
  return 1.0 / (1.0 + std::exp(-(r - dist) / w.boundary_width));
}

GridImage render(const ScenarioConfig& cfg, const std::vector<double>& tex, std::int32_t day, Modality modality) {
  GridImage img(cfg.dims(), day, modality);
  for (int b = 0; b < cfg.bands; ++b) {
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const double f = water_fraction(cfg.water, x, y, day);
        const double v = f * cfg.water_reflectance[b] + (1.0 - f) * cfg.land_reflectance[b] +
                         tex[static_cast<std::size_t>(b) * cfg.dims().pixels() + static_cast<std::size_t>(y) * cfg.width + x];
        img.at(b, x, y) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

ImageDims native_dims(const ScenarioConfig& cfg, Modality m) {
  if (m == Modality::kCoarse) return {cfg.width / cfg.decimation, cfg.height / cfg.decimation, cfg.bands};
  return cfg.dims();
}

}  // namespace

int ScenarioConfig::history_gap() const {
  if (history_spacing > 0) return history_spacing;
  if (schedule.size() < 2) return 1;
  std::vector<int> gaps;
  for (std::size_t i = 1; i < schedule.size(); ++i) gaps.push_back(schedule[i].day - schedule[i - 1].day);
  std::sort(gaps.begin(), gaps.end());
  return std::max(1, gaps[gaps.size() / 2]);
}

void ScenarioConfig::validate() const {
  if (width < 1 || height < 1 || bands < 1 || bands > 8) throw ValidationError("degenerate scene dimensions");
  if (decimation < 1 || width % decimation != 0 || height % decimation != 0) {
    throw ValidationError("decimation must divide the scene size");
  }
  if (schedule.empty()) throw ValidationError("schedule must not be empty");
  if (schedule.front().modality != Modality::kFine) throw ValidationError("schedule must start with a FINE acquisition");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i].modality == Modality::kLatent) throw ValidationError("schedule entries must be FINE or COARSE");
    if (i > 0 && schedule[i].day <= schedule[i - 1].day) throw ValidationError("schedule dates must be strictly increasing");
  }
  if (static_cast<int>(water_reflectance.size()) != bands || static_cast<int>(land_reflectance.size()) != bands) {
    throw ValidationError("one class reflectance per band required");
  }
  for (double v : water_reflectance) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("reflectances must lie in [0, 1]");
  }
  for (double v : land_reflectance) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("reflectances must lie in [0, 1]");
  }
  if (!(texture_std >= 0.0)) throw ValidationError("texture_std must be >= 0");
  if (!(water.boundary_width > 0.0) || !(water.radius_period_days >= 0.0)) {
    throw ValidationError("invalid water dynamics");
  }
  if (history_frames < 0 || history_spacing < 0) throw ValidationError("invalid history settings");
  for (const auto& c : clouds) {
    if (c.step < 0 || c.step >= static_cast<int>(schedule.size())) throw ValidationError("cloud step outside schedule");
    if (c.magnitude == 0.0) throw ValidationError("cloud magnitude must be non-zero");
    const ImageDims d = native_dims(*this, schedule[static_cast<std::size_t>(c.step)].modality);
    if (c.x < 0 || c.y < 0 || c.w < 1 || c.h < 1 || c.x + c.w > d.width || c.y + c.h > d.height) {
      throw ValidationError("cloud rectangle outside the observation");
    }
  }
  (void)rfuse::noise_preset(noise_preset, bands);
}

ScenarioConfig ScenarioConfig::desk() {
  ScenarioConfig c;
  c.schedule = default_schedule(12, 4);
  return c;
}

ScenarioConfig ScenarioConfig::drifting() {
  ScenarioConfig c = desk();
  c.water.radius = 9.0;
  c.water.radius_drift = 0.1;
  c.water.radius_amplitude = 0.0;
  return c;
}

ScenarioConfig ScenarioConfig::paper() {
  ScenarioConfig c;
  c.width = 81;
  c.height = 81;
  c.decimation = 9;
  c.water.center_x = 40.0;
  c.water.center_y = 40.0;
  c.water.radius = 21.0;
  c.water.radius_amplitude = 1.5;
  c.water.boundary_width = 2.0;
  c.schedule = default_schedule(12, 4);
  return c;
}

std::vector<GridImage> generate_scene(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto tex = texture(cfg, seed);
  std::vector<GridImage> frames;
  for (const auto& e : cfg.schedule) frames.push_back(render(cfg, tex, e.day, Modality::kLatent));
  return frames;
}

std::vector<GridImage> generate_history(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto tex = texture(cfg, seed);
  const int gap = cfg.history_gap();
  std::vector<GridImage> frames;
  for (int i = cfg.history_frames; i >= 1; --i) frames.push_back(render(cfg, tex, -i * gap, Modality::kFine));
  if (cfg.noiseless) return frames;
  // Historical frames are fine-sensor acquisitions, so they carry its noise.
  const SmallMatrix l = noise_preset(cfg.noise_preset, cfg.bands).fine.pixel_covariance().llt().matrixL();
  const std::size_t n = cfg.dims().pixels();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    auto rng = stream(seed, 0x415u, static_cast<std::uint32_t>(k));
    std::normal_distribution<double> normal(0.0, 1.0);
    SmallVector e(cfg.bands);
    for (std::size_t p = 0; p < n; ++p) {
      for (int b = 0; b < cfg.bands; ++b) e[b] = normal(rng);
      const SmallVector c = l * e;
      for (int b = 0; b < cfg.bands; ++b) {
        double& v = frames[k].data[static_cast<std::size_t>(b) * n + p];
        v = std::clamp(v + c[b], 0.0, 1.0);
      }
    }
  }
  return frames;
}

GridImage class_map(const ScenarioConfig& cfg, std::int32_t day) {
  GridImage img({cfg.width, cfg.height, 1}, day, Modality::kLatent);
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) img.at(0, x, y) = water_fraction(cfg.water, x, y, day) >= 0.5 ? 0.0 : 1.0;
  }
  return img;
}

std::vector<Observation> observe_schedule(const std::vector<GridImage>& scene, const ScenarioConfig& cfg,
                                          std::uint64_t seed) {
  cfg.validate();
  if (scene.size() != cfg.schedule.size()) throw ValidationError("scene length does not match the schedule");
  const NoisePreset preset = noise_preset(cfg.noise_preset, cfg.bands);
  std::vector<Observation> out;
  std::int32_t prev = cfg.schedule.front().day;
  for (std::size_t k = 0; k < scene.size(); ++k) {
    const ScheduleEntry& e = cfg.schedule[k];
    Observation obs;
    obs.modality = e.modality;
    obs.date = e.day;
    obs.delta_days = e.day - prev;
    prev = e.day;
    if (e.modality == Modality::kFine) {
      obs.op = DegradationOperator::fine(cfg.dims());
      obs.noise = preset.fine;
    } else {
      obs.op = DegradationOperator::coarse(cfg.dims(), cfg.decimation);
      obs.noise = preset.coarse;
    }
    obs.y = obs.op.apply(vectorize_state(scene[k], cfg.dims()));
    if (!cfg.noiseless) {
      const SmallMatrix l = obs.noise.pixel_covariance().llt().matrixL();
      auto rng = stream(seed, 0x0b5e4u, static_cast<std::uint32_t>(k));
      std::normal_distribution<double> normal(0.0, 1.0);
      SmallVector n(cfg.bands);
      for (std::size_t c = 0; c < obs.block_count(); ++c) {
        for (int b = 0; b < cfg.bands; ++b) n[b] = normal(rng);
        const SmallVector e_c = l * n;
        for (int b = 0; b < cfg.bands; ++b) obs.y[static_cast<Eigen::Index>(obs.op.measurement_index(c, b))] += e_c[b];
      }
    }
    out.push_back(std::move(obs));
  }
  return out;
}

std::vector<bool> cloud_mask(const Observation& obs, const std::vector<CloudSpec>& clouds, int step) {
  const ImageDims d = obs.op.output_dims();
  std::vector<bool> mask(obs.op.measurement_count(), false);
  for (const auto& c : clouds) {
    if (c.step != step) continue;
    if (c.x < 0 || c.y < 0 || c.w < 1 || c.h < 1 || c.x + c.w > d.width || c.y + c.h > d.height) {
      throw ValidationError("cloud rectangle outside the observation");
    }
    for (int y = c.y; y < c.y + c.h; ++y) {
      for (int x = c.x; x < c.x + c.w; ++x) {
        const auto px = static_cast<std::size_t>(y) * d.width + x;
        for (int b = 0; b < d.bands; ++b) mask[obs.op.measurement_index(px, b)] = true;
      }
    }
  }
  return mask;
}

std::vector<Observation> inject_clouds(std::vector<Observation> obs, const std::vector<CloudSpec>& clouds) {
  for (const auto& c : clouds) {
    if (c.step < 0 || c.step >= static_cast<int>(obs.size())) throw ValidationError("cloud step outside schedule");
    if (c.magnitude == 0.0) throw ValidationError("cloud magnitude must be non-zero");
  }
  for (std::size_t k = 0; k < obs.size(); ++k) {
    for (const auto& c : clouds) {
      if (c.step != static_cast<int>(k)) continue;
      const auto mask = cloud_mask(obs[k], {c}, c.step);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) obs[k].y[static_cast<Eigen::Index>(i)] += c.magnitude;
      }
    }
  }
  return obs;
}

}  // namespace rfuse
