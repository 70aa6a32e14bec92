#include "rfuse/config.hpp"

#include "rfuse/errors.hpp"
#include "rfuse/io.hpp"

#include <nlohmann/json.hpp>

namespace rfuse {

using nlohmann::json;

std::string_view to_string(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "gd"; }

Optimizer optimizer_from_string(std::string_view name) {
  if (name == "adam") return Optimizer::kAdam;
  if (name == "gd") return Optimizer::kGradientDescent;
  throw ValidationError("unknown optimizer: " + std::string(name));
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json scenario_to_json(const ScenarioConfig& s) {
  json sched = json::array();
  for (const auto& e : s.schedule) sched.push_back({{"day", e.day}, {"modality", std::string(to_string(e.modality))}});
  json clouds = json::array();
  for (const auto& c : s.clouds) {
    clouds.push_back({{"step", c.step}, {"x", c.x}, {"y", c.y}, {"w", c.w}, {"h", c.h}, {"magnitude", c.magnitude}});
  }
  const WaterDynamics& w = s.water;
  return {{"width", s.width},
          {"height", s.height},
          {"bands", s.bands},
          {"decimation", s.decimation},
          {"schedule", sched},
          {"water",
           {{"center_x", w.center_x},
            {"center_y", w.center_y},
            {"drift_x", w.drift_x},
            {"drift_y", w.drift_y},
            {"radius", w.radius},
            {"radius_drift", w.radius_drift},
            {"radius_amplitude", w.radius_amplitude},
            {"radius_period_days", w.radius_period_days},
            {"boundary_width", w.boundary_width}}},
          {"water_reflectance", s.water_reflectance},
          {"land_reflectance", s.land_reflectance},
          {"texture_std", s.texture_std},
          {"noise_preset", s.noise_preset},
          {"noiseless", s.noiseless},
          {"clouds", clouds},
          {"history_frames", s.history_frames},
          {"history_spacing", s.history_spacing},
          {"epoch", s.epoch}};
}

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig s = ScenarioConfig::desk();
  if (j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    if (name == "desk") {
      s = ScenarioConfig::desk();
    } else if (name == "drifting") {
      s = ScenarioConfig::drifting();
    } else if (name == "paper") {
      s = ScenarioConfig::paper();
    } else {
      throw ValidationError("unknown scenario preset: " + name);
    }
  }
  read(j, "width", s.width);
  read(j, "height", s.height);
  read(j, "bands", s.bands);
  read(j, "decimation", s.decimation);
  if (j.contains("schedule")) {
    s.schedule.clear();
    for (const auto& e : j.at("schedule")) {
      s.schedule.push_back({e.at("day").get<std::int32_t>(), modality_from_string(e.at("modality").get<std::string>())});
    }
  }
  if (j.contains("water")) {
    const json& w = j.at("water");
    read(w, "center_x", s.water.center_x);
    read(w, "center_y", s.water.center_y);
    read(w, "drift_x", s.water.drift_x);
    read(w, "drift_y", s.water.drift_y);
    read(w, "radius", s.water.radius);
    read(w, "radius_drift", s.water.radius_drift);
    read(w, "radius_amplitude", s.water.radius_amplitude);
    read(w, "radius_period_days", s.water.radius_period_days);
    read(w, "boundary_width", s.water.boundary_width);
  }
  read(j, "water_reflectance", s.water_reflectance);
  read(j, "land_reflectance", s.land_reflectance);
  read(j, "texture_std", s.texture_std);
  read(j, "noise_preset", s.noise_preset);
  read(j, "noiseless", s.noiseless);
  if (j.contains("clouds")) {
    s.clouds.clear();
    for (const auto& c : j.at("clouds")) {
      s.clouds.push_back({c.at("step").get<int>(), c.at("x").get<int>(), c.at("y").get<int>(), c.at("w").get<int>(),
                          c.at("h").get<int>(), c.at("magnitude").get<double>()});
    }
  }
  read(j, "history_frames", s.history_frames);
  read(j, "history_spacing", s.history_spacing);
  read(j, "epoch", s.epoch);
  return s;
}

}  // namespace

NoisePreset FilterSettings::noise(int bands) const {
  if (noise_preset != "custom") return rfuse::noise_preset(noise_preset, bands);
  if (custom_block.size() != static_cast<std::size_t>(bands)) {
    throw ValidationError("filter.custom_noise.block must be " + std::to_string(bands) + " x " + std::to_string(bands));
  }
  SmallMatrix block(bands, bands);
  for (int r = 0; r < bands; ++r) {
    if (custom_block[r].size() != static_cast<std::size_t>(bands)) {
      throw ValidationError("filter.custom_noise.block must be square");
    }
    for (int c = 0; c < bands; ++c) block(r, c) = custom_block[r][c];
  }
  NoisePreset p{NoiseModel{block, custom_fine_scale}, NoiseModel{block, custom_coarse_scale}};
  p.fine.validate();
  p.coarse.validate();
  return p;
}

FuseConfig RunConfig::fuse_config(int bands) const {
  FuseConfig f;
  f.vb = filter.vb;
  f.engine = engine;
  f.p0_block = p0_preset(filter.p0_preset, bands);
  f.p0_scale = filter.p0_scale;
  return f;
}

void RunConfig::validate() const {
  scenario.validate();
  filter.vb.validate();
  engine.validate();
  (void)filter.noise(scenario.bands);
  (void)p0_preset(filter.p0_preset, scenario.bands);
  if (!(filter.p0_scale > 0.0)) throw ValidationError("filter.p0_scale must be > 0");
  const TrainConfig& t = dynamics.train;
  if (!(t.learning_rate >= 0.0) || t.epochs < 0 || t.hidden < 1 || t.kernel < 1 || t.kernel % 2 == 0) {
    throw ValidationError("invalid dynamics.train settings");
  }
  if (!(t.reg.lambda1 >= 0.0) || !(t.reg.lambda2 >= 0.0)) throw ValidationError("regularization weights must be >= 0");
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  const auto& va = a.filter.vb;
  const auto& vb = b.filter.vb;
  const auto& ta = a.dynamics.train;
  const auto& tb = b.dynamics.train;
  return a.seed == b.seed && a.scenario == b.scenario && a.dynamics.variant == b.dynamics.variant &&
         a.dynamics.weights_path == b.dynamics.weights_path && ta.reg.lambda1 == tb.reg.lambda1 &&
         ta.reg.lambda2 == tb.reg.lambda2 && ta.learning_rate == tb.learning_rate && ta.epochs == tb.epochs &&
         ta.seed == tb.seed && ta.optimizer == tb.optimizer && ta.hidden == tb.hidden && ta.kernel == tb.kernel &&
         va.max_iters == vb.max_iters && va.rel_change_threshold == vb.rel_change_threshold && va.e0 == vb.e0 &&
         va.f0 == vb.f0 && va.eps_z == vb.eps_z && va.robust == vb.robust &&
         va.first_iteration_fallback == vb.first_iteration_fallback &&
         a.filter.noise_preset == b.filter.noise_preset && a.filter.p0_preset == b.filter.p0_preset &&
         a.filter.p0_scale == b.filter.p0_scale && a.filter.custom_block == b.filter.custom_block &&
         a.filter.custom_fine_scale == b.filter.custom_fine_scale &&
         a.filter.custom_coarse_scale == b.filter.custom_coarse_scale && a.engine.n_samples == b.engine.n_samples &&
         a.engine.seed == b.engine.seed && a.engine.full_state_sampling == b.engine.full_state_sampling &&
         a.engine.path == b.engine.path && a.joint_kmeans == b.joint_kmeans && a.output_dir == b.output_dir;
}

std::string run_config_to_json(const RunConfig& c) {
  const TrainConfig& t = c.dynamics.train;
  const VBConfig& v = c.filter.vb;
  json j = {{"seed", c.seed},
            {"scenario", scenario_to_json(c.scenario)},
            {"dynamics",
             {{"variant", std::string(to_string(c.dynamics.variant))},
              {"weights", c.dynamics.weights_path},
              {"train",
               {{"lambda1", t.reg.lambda1},
                {"lambda2", t.reg.lambda2},
                {"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"seed", t.seed},
                {"optimizer", std::string(to_string(t.optimizer))},
                {"hidden", t.hidden},
                {"kernel", t.kernel}}}}},
            {"filter",
             {{"robust", v.robust},
              {"max_iters", v.max_iters},
              {"rel_change_threshold", v.rel_change_threshold},
              {"e0", v.e0},
              {"f0", v.f0},
              {"eps_z", v.eps_z},
              {"first_iteration_fallback", v.first_iteration_fallback},
              {"noise_preset", c.filter.noise_preset},
              {"p0_preset", c.filter.p0_preset},
              {"p0_scale", c.filter.p0_scale}}},
            {"engine",
             {{"path", std::string(to_string(c.engine.path))},
              {"n_samples", c.engine.n_samples},
              {"seed", c.engine.seed},
              {"full_state_sampling", c.engine.full_state_sampling}}},
            {"evaluation", {{"joint_kmeans", c.joint_kmeans}}},
            {"output_dir", c.output_dir}};
  if (c.filter.noise_preset == "custom") {
    j["filter"]["custom_noise"] = {{"block", c.filter.custom_block},
                                   {"fine_scale", c.filter.custom_fine_scale},
                                   {"coarse_scale", c.filter.custom_coarse_scale}};
  }
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    read(j, "seed", c.seed);
    if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
    if (j.contains("dynamics")) {
      const json& d = j.at("dynamics");
      if (d.contains("variant")) c.dynamics.variant = dynamics_variant_from_string(d.at("variant").get<std::string>());
      read(d, "weights", c.dynamics.weights_path);
      if (d.contains("train")) {
        const json& t = d.at("train");
        read(t, "lambda1", c.dynamics.train.reg.lambda1);
        read(t, "lambda2", c.dynamics.train.reg.lambda2);
        read(t, "learning_rate", c.dynamics.train.learning_rate);
        read(t, "epochs", c.dynamics.train.epochs);
        read(t, "seed", c.dynamics.train.seed);
        if (t.contains("optimizer")) c.dynamics.train.optimizer = optimizer_from_string(t.at("optimizer").get<std::string>());
        read(t, "hidden", c.dynamics.train.hidden);
        read(t, "kernel", c.dynamics.train.kernel);
      }
    }
    if (j.contains("filter")) {
      const json& f = j.at("filter");
      read(f, "robust", c.filter.vb.robust);
      read(f, "max_iters", c.filter.vb.max_iters);
      read(f, "rel_change_threshold", c.filter.vb.rel_change_threshold);
      read(f, "e0", c.filter.vb.e0);
      read(f, "f0", c.filter.vb.f0);
      read(f, "eps_z", c.filter.vb.eps_z);
      read(f, "first_iteration_fallback", c.filter.vb.first_iteration_fallback);
      read(f, "noise_preset", c.filter.noise_preset);
      read(f, "p0_preset", c.filter.p0_preset);
      read(f, "p0_scale", c.filter.p0_scale);
      if (f.contains("custom_noise")) {
        const json& n = f.at("custom_noise");
        read(n, "block", c.filter.custom_block);
        read(n, "fine_scale", c.filter.custom_fine_scale);
        read(n, "coarse_scale", c.filter.custom_coarse_scale);
      }
    }
    if (j.contains("engine")) {
      const json& e = j.at("engine");
      if (e.contains("path")) c.engine.path = engine_path_from_string(e.at("path").get<std::string>());
      read(e, "n_samples", c.engine.n_samples);
      read(e, "seed", c.engine.seed);
      read(e, "full_state_sampling", c.engine.full_state_sampling);
    }
    if (j.contains("evaluation")) read(j.at("evaluation"), "joint_kmeans", c.joint_kmeans);
    read(j, "output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("config not found: " + path.string());
  return run_config_from_json(io::read_file_text(path));
}

}  // namespace rfuse
