#include "rfuse/config.hpp"
#include "rfuse/errors.hpp"
#include "rfuse/evaluation.hpp"
#include "rfuse/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;

namespace {

rfuse::RunConfig load_config(const std::string& path) {
  return path.empty() ? rfuse::RunConfig{} : rfuse::read_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust fusion of multiresolution image sequences"};
  app.require_subcommand(1);

  std::string config;
  std::string out;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic scene, its observations and history");
  sim->add_option("--config", config, "Run config (JSON)");
  sim->add_option("--out", out, "Output directory")->required();

  std::string history;
  auto* tr = app.add_subcommand("train-dynamics", "Estimate q0 and train the dynamics network");
  tr->add_option("--config", config, "Run config (JSON)");
  tr->add_option("--history", history, "Historical sequence manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Weights file to write (RFW1)")->required();

  std::string manifest;
  std::string weights;
  auto* fu = app.add_subcommand("fuse", "Filter an observation sequence");
  fu->add_option("--config", config, "Run config (JSON)");
  fu->add_option("--manifest", manifest, "Observation manifest")->required()->check(CLI::ExistingFile);
  fu->add_option("--weights", weights, "Weights file (defaults to dynamics.weights in the config)");
  fu->add_option("--out", out, "Output directory")->required();

  std::string est;
  std::string truth;
  std::string maps;
  bool joint = false;
  auto* ev = app.add_subcommand("evaluate", "RMSE and misclassification against ground truth");
  ev->add_option("--config", config, "Run config (JSON); supplies evaluation.joint_kmeans");
  ev->add_option("--est", est, "fuse output directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--truth", truth, "Ground-truth directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", out, "metrics.csv to write")->required();
  ev->add_option("--maps", maps, "Directory for misclassification maps");
  ev->add_flag("--joint", joint, "Cluster all dates jointly");

  std::string raster;
  int band = 0;
  auto* ex = app.add_subcommand("export-pgm", "Export one band of a raster as 16-bit PGM");
  ex->add_option("--raster", raster, "RFR1 raster")->required()->check(CLI::ExistingFile);
  ex->add_option("--band", band, "Band index");
  ex->add_option("--out", out, "PGM file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) {
      rfuse::simulate_to_dir(load_config(config), out);
    } else if (tr->parsed()) {
      const auto s = rfuse::train_to_file(load_config(config), history, out);
      if (s.pairs > 0) {
        std::cout << "trained on " << s.pairs << " pairs, objective " << s.initial_objective << " -> "
                  << s.final_objective << "\n";
      }
    } else if (fu->parsed()) {
      const auto cfg = load_config(config);
      if (weights.empty()) weights = cfg.dynamics.weights_path;
      if (weights.empty()) throw rfuse::ValidationError("no weights file given");
      if (!fs::exists(weights)) throw rfuse::ValidationError("weights not found: " + weights);
      rfuse::fuse_to_dir(cfg, manifest, weights, out);
    } else if (ev->parsed()) {
      const auto cfg = load_config(config);
      const auto rows = rfuse::evaluate_dirs(est, truth, out, joint || cfg.joint_kmeans, maps);
      double sum = 0.0;
      for (const auto& r : rows) sum += r.rmse;
      std::cout << "mean rmse " << sum / static_cast<double>(rows.size()) << " over " << rows.size() << " steps\n";
    } else if (ex->parsed()) {
      rfuse::export_pgm(rfuse::read_raster(raster), band, out);
    }
  } catch (const rfuse::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
