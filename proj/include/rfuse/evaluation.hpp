#pragma once

#include "rfuse/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rfuse {

/// sqrt(sum (est - truth)^2 / (L * N)).
double rmse(const GridImage& est, const GridImage& truth);

struct KMeansResult {
  std::vector<std::uint8_t> labels;  // per pixel, 0 = lower mean in the last (NIR) band
  std::vector<std::vector<double>> centers;
  int iterations = 0;
  std::vector<double> sse;  // within-cluster SSE after each assignment
};

/// Two-cluster Lloyd iterations on per-pixel band vectors, started from the pixels with the
/// lowest and highest last-band value.
KMeansResult kmeans2(const GridImage& img, int max_iters = 100);
/// Same, but clustering the pixels of several equally sized images together.
std::vector<KMeansResult> kmeans2_joint(const std::vector<GridImage>& images, int max_iters = 100);

/// 100 / N * number of pixels whose k-means labels differ.
double misclassification(const GridImage& est, const GridImage& truth, int max_iters = 100);
double label_disagreement(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

struct MetricsRow {
  int step = 0;
  std::int32_t date = 0;
  double rmse = 0.0;
  double mp = 0.0;
  std::size_t n_pixels = 0;
  std::string notes;
};

/// "step,date,rmse,mp,notes" table.
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

/// 16-bit binary PGM of one band, min-max scaled to [0, 65535]; the scale goes to a JSON sidecar.
std::vector<std::uint8_t> encode_pgm(const GridImage& img, int band, double* min_out = nullptr,
                                     double* max_out = nullptr);
void export_pgm(const GridImage& img, int band, const std::filesystem::path& path);

}  // namespace rfuse
