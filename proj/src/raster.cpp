#include "rfuse/raster.hpp"

#include "rfuse/errors.hpp"
#include "rfuse/io.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

namespace rfuse {

using nlohmann::json;

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kFine:
      return "FINE";
    case Modality::kCoarse:
      return "COARSE";
    case Modality::kLatent:
      return "LATENT";
  }
  return "UNKNOWN";
}

Modality modality_from_string(std::string_view name) {
  if (name == "FINE") return Modality::kFine;
  if (name == "COARSE") return Modality::kCoarse;
  if (name == "LATENT") return Modality::kLatent;
  throw ValidationError("unknown modality: " + std::string(name));
}

GridImage::GridImage(ImageDims d, std::int32_t date_days, Modality mod)
    : dims(d), data(d.size(), 0.0), date(date_days), modality(mod) {}

void GridImage::validate() const {
  if (dims.width <= 0 || dims.height <= 0 || dims.bands <= 0) {
    throw DimensionError("image dimensions must be positive");
  }
  if (data.size() != dims.size()) {
    throw DimensionError("image data length " + std::to_string(data.size()) + " != width*height*bands " +
                         std::to_string(dims.size()));
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw ValidationError("image contains non-finite values");
    }
  }
}

Eigen::VectorXd vectorize_state(const GridImage& img, const ImageDims& expected) {
  if (img.dims != expected) {
    throw DimensionError("state image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                         "x" + std::to_string(img.bands()) + ", expected " + std::to_string(expected.width) + "x" +
                         std::to_string(expected.height) + "x" + std::to_string(expected.bands));
  }
  if (img.data.size() != expected.size()) {
    throw DimensionError("image data length does not match its dimensions");
  }
  const std::size_t n = expected.pixels();
  Eigen::VectorXd v(static_cast<Eigen::Index>(expected.size()));
  for (int b = 0; b < expected.bands; ++b) {
    for (std::size_t p = 0; p < n; ++p) {
      v[static_cast<Eigen::Index>(state_index(p, b, expected.bands))] = img.data[b * n + p];
    }
  }
  return v;
}

GridImage devectorize_state(const Eigen::VectorXd& v, const ImageDims& dims, std::int32_t date, Modality modality) {
  if (static_cast<std::size_t>(v.size()) != dims.size()) {
    throw DimensionError("state vector length " + std::to_string(v.size()) + " != " + std::to_string(dims.size()));
  }
  GridImage img(dims, date, modality);
  const std::size_t n = dims.pixels();
  for (int b = 0; b < dims.bands; ++b) {
    for (std::size_t p = 0; p < n; ++p) {
      img.data[b * n + p] = v[static_cast<Eigen::Index>(state_index(p, b, dims.bands))];
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_raster(const GridImage& img) {
  if (img.data.size() != img.dims.size()) {
    throw DimensionError("image data length does not match its dimensions");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kRasterHeaderSize + 4 * img.data.size());
  for (char c : {'R', 'F', 'R', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  io::put_u32(out, static_cast<std::uint32_t>(img.width()));
  io::put_u32(out, static_cast<std::uint32_t>(img.height()));
  io::put_u32(out, static_cast<std::uint32_t>(img.bands()));
  io::put_i32(out, img.date);
  out.push_back(static_cast<std::uint8_t>(img.modality));
  out.insert(out.end(), 3, 0);
  for (double v : img.data) io::put_f32(out, static_cast<float>(v));
  return out;
}

GridImage decode_raster(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kRasterHeaderSize) {
    throw FormatError("truncated: raster header needs 24 bytes, got " + std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), "RFR1", 4) != 0) {
    throw FormatError("bad magic: expected RFR1");
  }
  const std::uint32_t w = io::get_u32(&bytes[4]);
  const std::uint32_t h = io::get_u32(&bytes[8]);
  const std::uint32_t b = io::get_u32(&bytes[12]);
  const std::int32_t date = io::get_i32(&bytes[16]);
  const std::uint8_t mod = bytes[20];
  if (w == 0 || h == 0 || b == 0) {
    throw FormatError("raster dimensions must be positive");
  }
  constexpr std::uint64_t kMaxValues = std::uint64_t{1} << 31;
  const std::uint64_t count = std::uint64_t{w} * h * b;
  if (w > kMaxValues || h > kMaxValues || b > kMaxValues || count > kMaxValues ||
      w > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
    throw FormatError("dimension overflow in raster header");
  }
  if (mod > static_cast<std::uint8_t>(Modality::kLatent)) {
    throw FormatError("unknown modality code " + std::to_string(mod));
  }
  const std::uint64_t expected = kRasterHeaderSize + 4 * count;
  if (bytes.size() < expected) {
    throw FormatError("truncated: header declares " + std::to_string(count) + " values, payload holds " +
                      std::to_string((bytes.size() - kRasterHeaderSize) / 4));
  }
  if (bytes.size() > expected) {
    throw FormatError("trailing bytes after raster payload");
  }
  GridImage img(ImageDims{static_cast<int>(w), static_cast<int>(h), static_cast<int>(b)}, date,
                static_cast<Modality>(mod));
  for (std::uint64_t i = 0; i < count; ++i) {
    img.data[i] = io::get_f32(&bytes[kRasterHeaderSize + 4 * i]);
  }
  return img;
}

GridImage read_raster(const std::filesystem::path& path) {
  try {
    return decode_raster(io::read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_raster(const GridImage& img, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_raster(img));
}

namespace {

std::chrono::year_month_day parse_epoch(const std::string& epoch) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char dash1 = 0;
  char dash2 = 0;
  if (epoch.size() != 10 || std::sscanf(epoch.c_str(), "%4d%c%2u%c%2u", &y, &dash1, &m, &dash2, &d) != 5 ||
      dash1 != '-' || dash2 != '-') {
    throw ValidationError("epoch must be YYYY-MM-DD, got '" + epoch + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) {
    throw ValidationError("invalid epoch date '" + epoch + "'");
  }
  return ymd;
}

}  // namespace

int SequenceManifest::epoch_day_of_year() const {
  const auto ymd = parse_epoch(epoch);
  const std::chrono::sys_days day{ymd};
  const std::chrono::sys_days jan1{ymd.year() / std::chrono::January / 1};
  return static_cast<int>((day - jan1).count());
}

std::filesystem::path SequenceManifest::resolve(const ManifestEntry& e) const {
  std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::string manifest_to_json(const SequenceManifest& m) {
  json j;
  j["epoch"] = m.epoch;
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"path", e.path}, {"modality", std::string(to_string(e.modality))}, {"date", e.date}});
  }
  return j.dump(2) + "\n";
}

SequenceManifest manifest_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  SequenceManifest m;
  m.base_dir = base_dir;
  try {
    const json j = json::parse(text);
    m.epoch = j.at("epoch").get<std::string>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back(ManifestEntry{e.at("path").get<std::string>(),
                                        modality_from_string(e.at("modality").get<std::string>()),
                                        e.at("date").get<std::int32_t>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  parse_epoch(m.epoch);
  for (std::size_t i = 1; i < m.entries.size(); ++i) {
    if (m.entries[i].date < m.entries[i - 1].date) {
      throw ValidationError("manifest dates must be non-decreasing (entry " + std::to_string(i) + ")");
    }
  }
  return m;
}

SequenceManifest read_manifest(const std::filesystem::path& path, bool check_files) {
  auto m = manifest_from_json(io::read_file_text(path), path.parent_path());
  if (check_files) {
    for (const auto& e : m.entries) {
      const auto p = m.resolve(e);
      if (!std::filesystem::exists(p)) {
        throw ValidationError("manifest entry does not exist: " + p.string());
      }
      read_raster(p);
    }
  }
  return m;
}

void write_manifest(const SequenceManifest& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, manifest_to_json(m));
}

}  // namespace rfuse
