#include "rfuse/config.hpp"
#include "rfuse/errors.hpp"
#include "rfuse/evaluation.hpp"
#include "rfuse/pipeline.hpp"
#include "rfuse/special.hpp"
#include "rfuse/variational.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace rfuse;

namespace {

/// (bands, height, width) float64 array.
py::array_t<double> to_array(const GridImage& img) {
  py::array_t<double> a({img.bands(), img.height(), img.width()});
  std::copy(img.data.begin(), img.data.end(), a.mutable_data());
  return a;
}

GridImage from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a, std::int32_t date,
                     const std::string& modality) {
  if (a.ndim() != 3) throw ValidationError("expected a (bands, height, width) array");
  GridImage img({static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))}, date,
                modality_from_string(modality));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  img.validate();
  return img;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Robust recursive fusion of multiresolution image sequences";
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("default_config", [] { return run_config_to_json(RunConfig{}); }, "Default run config as JSON text.");
  m.def(
      "normalize_config", [](const std::string& text) { return run_config_to_json(run_config_from_json(text)); },
      py::arg("text"), "Parse, validate and re-serialize a run config with every field filled in.");

  m.def(
      "simulate",
      [](const std::string& config, const std::filesystem::path& out) {
        simulate_to_dir(run_config_from_json(config), out);
      },
      py::arg("config"), py::arg("out"));
  m.def(
      "train_dynamics",
      [](const std::string& config, const std::filesystem::path& history, const std::filesystem::path& out) {
        const auto s = train_to_file(run_config_from_json(config), history, out);
        return py::dict(py::arg("pairs") = s.pairs, py::arg("initial_objective") = s.initial_objective,
                        py::arg("final_objective") = s.final_objective);
      },
      py::arg("config"), py::arg("history"), py::arg("out"));
  m.def(
      "fuse",
      [](const std::string& config, const std::filesystem::path& manifest, const std::filesystem::path& weights,
         const std::filesystem::path& out) {
        py::gil_scoped_release release;
        fuse_to_dir(run_config_from_json(config), manifest, weights, out);
      },
      py::arg("config"), py::arg("manifest"), py::arg("weights"), py::arg("out"));
  m.def(
      "evaluate",
      [](const std::filesystem::path& est, const std::filesystem::path& truth, const std::filesystem::path& out,
         bool joint) {
        py::list rows;
        for (const auto& r : evaluate_dirs(est, truth, out, joint)) {
          rows.append(py::dict(py::arg("step") = r.step, py::arg("date") = r.date, py::arg("rmse") = r.rmse,
                               py::arg("mp") = r.mp, py::arg("n_pixels") = r.n_pixels, py::arg("notes") = r.notes));
        }
        return rows;
      },
      py::arg("est"), py::arg("truth"), py::arg("out"), py::arg("joint") = false);

  m.def(
      "read_raster",
      [](const std::filesystem::path& path) {
        const GridImage img = read_raster(path);
        return py::make_tuple(to_array(img), img.date, std::string(to_string(img.modality)));
      },
      py::arg("path"), "Returns (array[bands, height, width], date, modality).");
  m.def(
      "write_raster",
      [](const std::filesystem::path& path, const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         std::int32_t date, const std::string& modality) { write_raster(from_array(a, date, modality), path); },
      py::arg("path"), py::arg("array"), py::arg("date") = 0, py::arg("modality") = "LATENT");

  m.def(
      "rmse",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& est,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& truth) {
        return rmse(from_array(est, 0, "LATENT"), from_array(truth, 0, "LATENT"));
      },
      py::arg("est"), py::arg("truth"));
  m.def(
      "kmeans2",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, int max_iters) {
        const GridImage g = from_array(img, 0, "LATENT");
        const auto r = kmeans2(g, max_iters);
        py::array_t<std::uint8_t> labels({g.height(), g.width()});
        std::copy(r.labels.begin(), r.labels.end(), labels.mutable_data());
        return labels;
      },
      py::arg("image"), py::arg("max_iters") = 100, "Two-cluster labels, 0 for the lower last-band cluster.");
  m.def(
      "misclassification",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& est,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& truth) {
        return misclassification(from_array(est, 0, "LATENT"), from_array(truth, 0, "LATENT"));
      },
      py::arg("est"), py::arg("truth"));

  m.def("digamma", &digamma, py::arg("x"));
  m.def(
      "expected_precision_block",
      [](const Eigen::VectorXd& z, const Eigen::MatrixXd& r) {
        return Eigen::MatrixXd(expected_precision_block(SmallVector(z), SmallMatrix(r)));
      },
      py::arg("z_mean"), py::arg("r"), "Expected inverse noise covariance of one measurement block.");
}
