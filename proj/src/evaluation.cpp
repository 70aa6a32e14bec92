#include "rfuse/evaluation.hpp"

#include "rfuse/errors.hpp"
#include "rfuse/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rfuse {

double rmse(const GridImage& est, const GridImage& truth) {
  if (!(est.dims == truth.dims)) throw DimensionError("rmse: image dimensions differ");
  if (est.data.empty()) throw ValidationError("rmse: empty images");
  double ss = 0.0;
  for (std::size_t i = 0; i < est.data.size(); ++i) {
    const double d = est.data[i] - truth.data[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(est.data.size()));
}

namespace {

using Point = std::vector<double>;

double sq_dist(const double* a, const Point& c) {
  double s = 0.0;
  for (std::size_t b = 0; b < c.size(); ++b) s += (a[b] - c[b]) * (a[b] - c[b]);
  return s;
}

/// Lloyd's algorithm on row-major points (n x bands).
KMeansResult lloyd(const std::vector<double>& pts, int bands, int max_iters) {
  if (max_iters < 1) throw ValidationError("kmeans2: max_iters must be >= 1");
  const std::size_t n = pts.size() / static_cast<std::size_t>(bands);
  const int nir = bands - 1;
  std::size_t lo = 0;
  std::size_t hi = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (pts[i * bands + nir] < pts[lo * bands + nir]) lo = i;
    if (pts[i * bands + nir] > pts[hi * bands + nir]) hi = i;
  }
  auto point = [&](std::size_t i) { return Point(pts.begin() + i * bands, pts.begin() + (i + 1) * bands); };
  KMeansResult r;
  r.centers = {point(lo), point(hi)};
  if (r.centers[0] == r.centers[1]) {
    double best = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = sq_dist(pts.data() + i * bands, r.centers[0]);
      if (d > best) {
        best = d;
        hi = i;
      }
    }
    if (best == 0.0) throw ValidationError("kmeans2: all pixels are identical");
    r.centers[1] = point(hi);
  }

  r.labels.assign(n, 0);
  bool first = true;
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d0 = sq_dist(pts.data() + i * bands, r.centers[0]);
      const double d1 = sq_dist(pts.data() + i * bands, r.centers[1]);
      const std::uint8_t l = d1 < d0 ? 1 : 0;
      sse += std::min(d0, d1);
      if (l != r.labels[i]) changed = true;
      r.labels[i] = l;
    }
    r.sse.push_back(sse);
    r.iterations = it + 1;
    if (!changed && !first) break;
    first = false;
    for (int k = 0; k < 2; ++k) {
      Point sum(static_cast<std::size_t>(bands), 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (r.labels[i] != k) continue;
        for (int b = 0; b < bands; ++b) sum[b] += pts[i * bands + b];
        ++count;
      }
      if (count == 0) continue;
      for (auto& v : sum) v /= static_cast<double>(count);
      r.centers[k] = sum;
    }
  }
  if (r.centers[0][nir] > r.centers[1][nir]) {
    std::swap(r.centers[0], r.centers[1]);
    for (auto& l : r.labels) l = static_cast<std::uint8_t>(1 - l);
  }
  return r;
}

std::vector<double> pixel_rows(const GridImage& img) {
  img.validate();
  const std::size_t n = img.dims.pixels();
  std::vector<double> pts(img.data.size());
  for (int b = 0; b < img.bands(); ++b) {
    for (std::size_t p = 0; p < n; ++p) pts[p * img.bands() + b] = img.data[b * n + p];
  }
  return pts;
}

}  // namespace

KMeansResult kmeans2(const GridImage& img, int max_iters) {
  if (img.dims.pixels() < 2) throw ValidationError("kmeans2: need at least 2 pixels");
  return lloyd(pixel_rows(img), img.bands(), max_iters);
}

std::vector<KMeansResult> kmeans2_joint(const std::vector<GridImage>& images, int max_iters) {
  if (images.empty()) throw ValidationError("kmeans2_joint: no images");
  std::vector<double> pts;
  for (const auto& img : images) {
    if (!(img.dims == images.front().dims)) throw DimensionError("kmeans2_joint: image dimensions differ");
    const auto rows = pixel_rows(img);
    pts.insert(pts.end(), rows.begin(), rows.end());
  }
  const KMeansResult all = lloyd(pts, images.front().bands(), max_iters);
  const std::size_t n = images.front().dims.pixels();
  std::vector<KMeansResult> out;
  for (std::size_t k = 0; k < images.size(); ++k) {
    KMeansResult r = all;
    r.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(k * n),
                    all.labels.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
    out.push_back(std::move(r));
  }
  return out;
}

double label_disagreement(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("label maps differ in size");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return 100.0 * static_cast<double>(diff) / static_cast<double>(a.size());
}

double misclassification(const GridImage& est, const GridImage& truth, int max_iters) {
  if (!(est.dims == truth.dims)) throw DimensionError("misclassification: image dimensions differ");
  return label_disagreement(kmeans2(est, max_iters).labels, kmeans2(truth, max_iters).labels);
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "step,date,rmse,mp,notes\n";
  for (const auto& r : rows) os << r.step << ',' << r.date << ',' << r.rmse << ',' << r.mp << ',' << r.notes << '\n';
  return os.str();
}

std::vector<std::uint8_t> encode_pgm(const GridImage& img, int band, double* min_out, double* max_out) {
  img.validate();
  if (band < 0 || band >= img.bands()) throw ValidationError("export-pgm: band out of range");
  const std::size_t n = img.dims.pixels();
  const auto first = img.data.begin() + static_cast<std::ptrdiff_t>(band * n);
  const auto [mn, mx] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(n));
  const double lo = *mn;
  const double hi = *mx;
  const std::string header = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t p = 0; p < n; ++p) {
    const double v = hi > lo ? (img.data[band * n + p] - lo) / (hi - lo) : 0.0;
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  if (min_out) *min_out = lo;
  if (max_out) *max_out = hi;
  return out;
}

void export_pgm(const GridImage& img, int band, const std::filesystem::path& path) {
  double lo = 0.0;
  double hi = 0.0;
  const auto bytes = encode_pgm(img, band, &lo, &hi);
  nlohmann::json side = {{"band", band}, {"min", lo}, {"max", hi}, {"maxval", 65535},
                         {"width", img.width()}, {"height", img.height()}, {"date", img.date}};
  io::write_file_atomic(path, bytes);
  io::write_file_atomic(std::filesystem::path(path.string() + ".json"), side.dump(2) + "\n");
}

}  // namespace rfuse
