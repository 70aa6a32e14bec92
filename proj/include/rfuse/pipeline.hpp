#pragma once

// File-level stages behind the CLI subcommands. Every output is written atomically.
//
// simulate writes into <out>/:
//   observations.json, obs/obs_NNN.rfr        degraded (and clouded) acquisitions
//   history.json, history/hist_NNN.rfr         FINE historical frames before day 0
//   truth/frames.json, truth/frame_NNN.rfr     LATENT ground truth
//   truth/classes.json, truth/class_NNN.rfr    water (0) / land (1) maps
// fuse writes into <out>/:
//   estimates.json, mean_NNN.rfr, var_NNN.rfr  posterior mean and marginal variance per step
//   outliers.csv                               step,measurement,z_mean
//   steps.csv                                  step,date,modality,iterations

#include "rfuse/config.hpp"
#include "rfuse/evaluation.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace rfuse {

void simulate_to_dir(const RunConfig& cfg, const std::filesystem::path& out);

struct TrainSummary {
  int pairs = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// q0 from the history manifest, plus network training for the NN variant.
TrainSummary train_to_file(const RunConfig& cfg, const std::filesystem::path& history_manifest,
                           const std::filesystem::path& weights_out);

/// Refuses LATENT entries and any path with a "truth" component, so ground truth never
/// reaches the filter.
void check_fuse_inputs(const SequenceManifest& manifest);

void fuse_to_dir(const RunConfig& cfg, const std::filesystem::path& manifest_path,
                 const std::filesystem::path& weights_path, const std::filesystem::path& out);

/// Pairs estimates with truth frames by date. `maps_dir`, when non-empty, receives per-step
/// misclassification maps (1 where the labels differ).
std::vector<MetricsRow> evaluate_dirs(const std::filesystem::path& est_dir, const std::filesystem::path& truth_dir,
                                      const std::filesystem::path& csv_out, bool joint_kmeans,
                                      const std::filesystem::path& maps_dir = {});

}  // namespace rfuse
