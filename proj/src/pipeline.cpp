#include "rfuse/pipeline.hpp"

#include "rfuse/errors.hpp"
#include "rfuse/io.hpp"

#include <cstdio>
#include <sstream>

namespace rfuse {

namespace fs = std::filesystem;

namespace {

std::string numbered(const char* stem, std::size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu.rfr", stem, k);
  return buf;
}

SequenceManifest write_frames(const std::vector<GridImage>& frames, const fs::path& root, const std::string& subdir,
                              const char* stem, const std::string& epoch) {
  fs::create_directories(root / subdir);
  SequenceManifest m;
  m.epoch = epoch;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const std::string rel = subdir.empty() ? numbered(stem, k) : subdir + "/" + numbered(stem, k);
    write_raster(frames[k], root / rel);
    m.entries.push_back({rel, frames[k].modality, frames[k].date});
  }
  return m;
}

std::vector<GridImage> load_frames(const SequenceManifest& m) {
  std::vector<GridImage> out;
  for (const auto& e : m.entries) out.push_back(read_raster(m.resolve(e)));
  return out;
}

}  // namespace

void simulate_to_dir(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const ScenarioConfig& sc = cfg.scenario;
  fs::create_directories(out);

  const auto scene = generate_scene(sc, cfg.seed);
  const auto obs = inject_clouds(observe_schedule(scene, sc, cfg.seed), sc.clouds);
  std::vector<GridImage> obs_frames;
  for (const auto& o : obs) {
    GridImage img = measurement_to_image(o.y, o.op, o.date);
    img.modality = o.modality;
    obs_frames.push_back(std::move(img));
  }
  write_manifest(write_frames(obs_frames, out, "obs", "obs", sc.epoch), out / "observations.json");

  write_manifest(write_frames(generate_history(sc, cfg.seed), out, "history", "hist", sc.epoch),
                 out / "history.json");

  std::vector<GridImage> classes;
  for (const auto& f : scene) classes.push_back(class_map(sc, f.date));
  const fs::path truth = out / "truth";
  write_manifest(write_frames(scene, truth, "", "frame", sc.epoch), truth / "frames.json");
  write_manifest(write_frames(classes, truth, "", "class", sc.epoch), truth / "classes.json");
}

TrainSummary train_to_file(const RunConfig& cfg, const fs::path& history_manifest, const fs::path& weights_out) {
  cfg.validate();
  const SequenceManifest m = read_manifest(history_manifest);
  const auto frames = load_frames(m);
  if (frames.size() < 2) throw ValidationError("history needs at least 2 frames");
  std::vector<std::int32_t> dates;
  for (const auto& f : frames) dates.push_back(f.date);

  DynamicsFile file;
  file.q0 = compute_q0(frames, dates);
  TrainSummary summary;
  if (cfg.dynamics.variant == DynamicsVariant::kNeural) {
    const auto pairs = make_training_pairs(frames, vectorize_state(file.q0, frames.front().dims),
                                           m.epoch_day_of_year());
    const TrainResult r = train(pairs, frames.front().dims, cfg.dynamics.train);
    file.params = r.params;
    summary.pairs = static_cast<int>(pairs.size());
    summary.initial_objective = r.objective_history.front();
    summary.final_objective = r.objective_history.back();
  }
  if (weights_out.has_parent_path()) fs::create_directories(weights_out.parent_path());
  write_weights(file, weights_out);
  return summary;
}

void check_fuse_inputs(const SequenceManifest& manifest) {
  if (manifest.entries.empty()) throw ValidationError("manifest has no entries");
  for (const auto& e : manifest.entries) {
    if (e.modality == Modality::kLatent) throw ValidationError("fuse refuses LATENT entries: " + e.path);
    for (const auto& part : manifest.resolve(e)) {
      if (part == "truth") throw ValidationError("fuse refuses ground-truth paths: " + e.path);
    }
  }
  if (manifest.entries.front().modality != Modality::kFine) {
    throw ValidationError("the first manifest entry must be a FINE image");
  }
}

void fuse_to_dir(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& weights_path,
                 const fs::path& out) {
  cfg.validate();
  const SequenceManifest m = read_manifest(manifest_path);
  check_fuse_inputs(m);
  const GridImage init = read_raster(m.resolve(m.entries.front()));
  const ImageDims hr = init.dims;

  const DynamicsFile weights = read_weights(weights_path);
  if (!(weights.q0.dims == hr)) throw DimensionError("weights q0 does not match the scene dimensions");
  TransitionModel model = TransitionModel::random_walk();
  if (cfg.dynamics.variant == DynamicsVariant::kNeural) {
    if (!weights.params) throw ValidationError("NN dynamics requested but the weights file has no network");
    model = TransitionModel::neural(*weights.params);
  }

  const auto observations = load_observations(m, hr, cfg.filter.noise(hr.bands));
  const auto steps = fuse_sequence(init, observations, model, vectorize_state(weights.q0, hr), m.epoch_day_of_year(),
                                   cfg.fuse_config(hr.bands));

  fs::create_directories(out);
  SequenceManifest est;
  est.epoch = m.epoch;
  std::ostringstream outliers;
  outliers.precision(10);
  outliers << "step,measurement,z_mean\n";
  std::ostringstream log;
  log << "step,date,modality,iterations\n";
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const FuseStep& s = steps[k];
    const std::string mean_name = numbered("mean", k);
    write_raster(devectorize_state(s.belief.mean, hr, s.date, Modality::kLatent), out / mean_name);
    write_raster(devectorize_state(s.belief.cov.diagonal(), hr, s.date, Modality::kLatent), out / numbered("var", k));
    est.entries.push_back({mean_name, Modality::kLatent, s.date});
    for (Eigen::Index i = 0; i < s.outliers.z_mean.size(); ++i) {
      outliers << k << ',' << i << ',' << s.outliers.z_mean[i] << '\n';
    }
    log << k << ',' << s.date << ',' << to_string(s.modality) << ',' << s.iterations << '\n';
  }
  write_manifest(est, out / "estimates.json");
  io::write_file_atomic(out / "outliers.csv", outliers.str());
  io::write_file_atomic(out / "steps.csv", log.str());
}

std::vector<MetricsRow> evaluate_dirs(const fs::path& est_dir, const fs::path& truth_dir, const fs::path& csv_out,
                                      bool joint_kmeans, const fs::path& maps_dir) {
  const SequenceManifest em = read_manifest(est_dir / "estimates.json");
  const SequenceManifest tm = read_manifest(truth_dir / "frames.json");
  std::vector<GridImage> est;
  std::vector<GridImage> truth;
  std::vector<int> steps;
  const auto truth_frames = load_frames(tm);
  for (std::size_t k = 0; k < em.entries.size(); ++k) {
    const GridImage* match = nullptr;
    for (const auto& t : truth_frames) {
      if (t.date == em.entries[k].date) match = &t;
    }
    if (!match) continue;
    est.push_back(read_raster(em.resolve(em.entries[k])));
    truth.push_back(*match);
    steps.push_back(static_cast<int>(k));
  }
  if (est.empty()) throw ValidationError("no estimate shares a date with the truth frames");

  std::vector<std::vector<std::uint8_t>> est_labels;
  std::vector<std::vector<std::uint8_t>> truth_labels;
  if (joint_kmeans) {
    for (const auto& r : kmeans2_joint(est)) est_labels.push_back(r.labels);
    for (const auto& r : kmeans2_joint(truth)) truth_labels.push_back(r.labels);
  } else {
    for (const auto& e : est) est_labels.push_back(kmeans2(e).labels);
    for (const auto& t : truth) truth_labels.push_back(kmeans2(t).labels);
  }

  if (!maps_dir.empty()) fs::create_directories(maps_dir);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < est.size(); ++i) {
    MetricsRow r;
    r.step = steps[i];
    r.date = est[i].date;
    r.rmse = rmse(est[i], truth[i]);
    r.mp = label_disagreement(est_labels[i], truth_labels[i]);
    r.n_pixels = est[i].dims.pixels();
    if (joint_kmeans) r.notes = "joint kmeans";
    rows.push_back(r);
    if (!maps_dir.empty()) {
      GridImage map({est[i].width(), est[i].height(), 1}, est[i].date, Modality::kLatent);
      for (std::size_t p = 0; p < map.data.size(); ++p) map.data[p] = est_labels[i][p] != truth_labels[i][p];
      write_raster(map, maps_dir / numbered("miscls", static_cast<std::size_t>(r.step)));
    }
  }
  if (csv_out.has_parent_path()) fs::create_directories(csv_out.parent_path());
  io::write_file_atomic(csv_out, metrics_to_csv(rows));
  return rows;
}

}  // namespace rfuse
