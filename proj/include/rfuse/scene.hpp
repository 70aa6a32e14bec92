#pragma once

// Synthetic two-class scenes (a water disk over land) with a degraded, noisy and optionally
// cloud-contaminated observation schedule, plus a historical dataset for the dynamics model.

#include "rfuse/raster.hpp"
#include "rfuse/sensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rfuse {

struct ScheduleEntry {
  std::int32_t day = 0;
  Modality modality = Modality::kFine;
  friend bool operator==(const ScheduleEntry&, const ScheduleEntry&) = default;
};

/// Additive offset on every band inside rect (x, y, w, h), given at the observation's native
/// resolution. Positive for bright clouds, negative for shadows.
struct CloudSpec {
  int step = 0;
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  double magnitude = 0.0;
  friend bool operator==(const CloudSpec&, const CloudSpec&) = default;
};

struct WaterDynamics {
  double center_x = 13.0;  // pixels at day 0
  double center_y = 13.0;
  double drift_x = 0.0;  // pixels per day
  double drift_y = 0.0;
  double radius = 7.0;
  double radius_drift = 0.0;  // pixels per day
  double radius_amplitude = 0.5;
  double radius_period_days = 64.0;
  double boundary_width = 1.0;  // logistic scale of the shoreline, pixels
  friend bool operator==(const WaterDynamics&, const WaterDynamics&) = default;
};

struct ScenarioConfig {
  int width = 27;
  int height = 27;
  int bands = 2;
  int decimation = 3;
  std::vector<ScheduleEntry> schedule;
  WaterDynamics water;
  std::vector<double> water_reflectance{0.04, 0.02};
  std::vector<double> land_reflectance{0.10, 0.35};
  double texture_std = 0.01;
  std::string noise_preset = "desk";
  bool noiseless = false;
  std::vector<CloudSpec> clouds;
  int history_frames = 20;
  /// Days between historical frames; 0 uses the median gap of the schedule.
  int history_spacing = 0;
  std::string epoch = "2000-01-01";

  [[nodiscard]] ImageDims dims() const { return {width, height, bands}; }
  [[nodiscard]] int history_gap() const;
  void validate() const;

  /// 27 x 27, decimation 3, 12 steps every 4 days; FINE at steps 0, 4, 8 and COARSE otherwise.
  static ScenarioConfig desk();
  /// desk() with a steadily expanding water body (0.1 px/day) and no oscillation.
  static ScenarioConfig drifting();
  /// 81 x 81, decimation 9.
  static ScenarioConfig paper();

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

/// Ground-truth LATENT frames on the schedule days.
std::vector<GridImage> generate_scene(const ScenarioConfig& cfg, std::uint64_t seed);
/// Historical frames before day 0, `history_frames` of them spaced by history_gap(), marked FINE
/// and carrying fine-sensor noise unless the scenario is noiseless.
std::vector<GridImage> generate_history(const ScenarioConfig& cfg, std::uint64_t seed);
/// Water (0) / land (1) map from the noiseless geometry at `day`, one band.
GridImage class_map(const ScenarioConfig& cfg, std::int32_t day);

/// Degrades each frame with its scheduled sensor and adds seeded Gaussian noise from the preset.
std::vector<Observation> observe_schedule(const std::vector<GridImage>& scene, const ScenarioConfig& cfg,
                                          std::uint64_t seed);

/// Adds each cloud's magnitude to every in-rect measurement of its step, all bands.
std::vector<Observation> inject_clouds(std::vector<Observation> obs, const std::vector<CloudSpec>& clouds);

/// Per-measurement contamination flags (band-stacked) of observation `step`.
std::vector<bool> cloud_mask(const Observation& obs, const std::vector<CloudSpec>& clouds, int step);

}  // namespace rfuse
