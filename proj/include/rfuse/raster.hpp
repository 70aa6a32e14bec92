#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rfuse {

enum class Modality : std::uint8_t { kFine = 0, kCoarse = 1, kLatent = 2 };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view name);

struct ImageDims {
  int width = 0;
  int height = 0;
  int bands = 0;

  [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  [[nodiscard]] std::size_t size() const { return pixels() * bands; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

/// Multi-band raster with planar band-major storage:
/// data[b * width * height + y * width + x].
struct GridImage {
  ImageDims dims;
  std::vector<double> data;
  std::int32_t date = 0;
  Modality modality = Modality::kLatent;

  GridImage() = default;
  GridImage(ImageDims d, std::int32_t date_days, Modality mod);

  [[nodiscard]] int width() const { return dims.width; }
  [[nodiscard]] int height() const { return dims.height; }
  [[nodiscard]] int bands() const { return dims.bands; }

  double& at(int band, int x, int y) {
    return data[static_cast<std::size_t>(band) * dims.pixels() +
                static_cast<std::size_t>(y) * dims.width + x];
  }
  [[nodiscard]] double at(int band, int x, int y) const {
    return data[static_cast<std::size_t>(band) * dims.pixels() +
                static_cast<std::size_t>(y) * dims.width + x];
  }

  /// Throws if the data length disagrees with the dimensions or a value is not finite.
  void validate() const;

  friend bool operator==(const GridImage&, const GridImage&) = default;
};

/// Pixel-major state ordering: all bands of HR pixel 0, then pixel 1, ...
/// with pixels scanned row-major from the top-left corner.
inline std::size_t state_index(std::size_t pixel, int band, int bands) {
  return pixel * static_cast<std::size_t>(bands) + static_cast<std::size_t>(band);
}

Eigen::VectorXd vectorize_state(const GridImage& img, const ImageDims& expected);
GridImage devectorize_state(const Eigen::VectorXd& v, const ImageDims& dims,
                            std::int32_t date = 0, Modality modality = Modality::kLatent);

// RFR1 raster format, little-endian:
//   "RFR1" | u32 width | u32 height | u32 bands | i32 date | u8 modality | 3 pad bytes
//   followed by width*height*bands f32 values, band-major planar.
inline constexpr std::size_t kRasterHeaderSize = 24;

std::vector<std::uint8_t> encode_raster(const GridImage& img);
GridImage decode_raster(const std::vector<std::uint8_t>& bytes);
GridImage read_raster(const std::filesystem::path& path);
void write_raster(const GridImage& img, const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;
  Modality modality = Modality::kFine;
  std::int32_t date = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct SequenceManifest {
  std::string epoch = "2000-01-01";
  std::vector<ManifestEntry> entries;

  /// Day of year (0-based) of the epoch; anchors the date channel of the dynamics model.
  [[nodiscard]] int epoch_day_of_year() const;
  /// Entry path resolved against the manifest's directory.
  [[nodiscard]] std::filesystem::path resolve(const ManifestEntry& e) const;

  std::filesystem::path base_dir;
  friend bool operator==(const SequenceManifest& a, const SequenceManifest& b) {
    return a.epoch == b.epoch && a.entries == b.entries;
  }
};

std::string manifest_to_json(const SequenceManifest& m);
SequenceManifest manifest_from_json(const std::string& text, const std::filesystem::path& base_dir);
/// Parses and validates: non-decreasing dates, epoch format, and (when check_files) that every
/// entry exists and decodes as an RFR1 raster.
SequenceManifest read_manifest(const std::filesystem::path& path, bool check_files = true);
void write_manifest(const SequenceManifest& m, const std::filesystem::path& path);

}  // namespace rfuse
