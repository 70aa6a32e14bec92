#pragma once

// RunConfig: the single JSON document that drives simulate, train-dynamics, fuse and evaluate.
//
// {
//   "seed": 0,
//   "scenario": {"preset": "desk", ...ScenarioConfig fields...},
//   "dynamics": {"variant": "RANDOM_WALK" | "NN", "weights": "w.rfw",
//                "train": {"lambda1", "lambda2", "learning_rate", "epochs", "seed", "optimizer", "hidden", "kernel"}},
//   "filter": {"robust", "max_iters", "rel_change_threshold", "e0", "f0", "eps_z",
//              "first_iteration_fallback", "noise_preset", "p0_preset", "p0_scale",
//              "custom_noise": {"block": [[...]], "fine_scale", "coarse_scale"}},
//   "engine": {"path": "distributed" | "dense", "n_samples", "seed", "full_state_sampling"},
//   "evaluation": {"joint_kmeans": false},
//   "output_dir": "out"
// }

#include "rfuse/distributed.hpp"
#include "rfuse/dynamics.hpp"
#include "rfuse/scene.hpp"
#include "rfuse/variational.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rfuse {

struct DynamicsConfig {
  DynamicsVariant variant = DynamicsVariant::kRandomWalk;
  std::string weights_path;
  TrainConfig train;
};

struct FilterSettings {
  VBConfig vb;
  std::string noise_preset = "desk";
  std::string p0_preset = "oroville";
  double p0_scale = 1e-10;
  /// Read when noise_preset is "custom": one cross-band block shared by both sensors.
  std::vector<std::vector<double>> custom_block;
  double custom_fine_scale = 0.0;
  double custom_coarse_scale = 0.0;

  /// The named preset, or the custom numbers.
  [[nodiscard]] NoisePreset noise(int bands) const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ScenarioConfig scenario = ScenarioConfig::desk();
  DynamicsConfig dynamics;
  FilterSettings filter;
  EngineConfig engine;
  bool joint_kmeans = false;
  std::string output_dir = "out";

  [[nodiscard]] FuseConfig fuse_config(int bands) const;
  void validate() const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

std::string run_config_to_json(const RunConfig& cfg);
/// Missing fields take their defaults; "scenario.preset" picks the base scenario first.
RunConfig run_config_from_json(const std::string& text);
RunConfig read_run_config(const std::filesystem::path& path);

std::string_view to_string(Optimizer o);
Optimizer optimizer_from_string(std::string_view name);

}  // namespace rfuse
