#pragma once

// Spectrogram data model, the MELS binary format, CSV fixtures and
// dataset-level statistics used by the occlusion content types.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace occlex {

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
/// Connection-level failure talking to an external predictor; retryable.
struct TransportError : Error {
  using Error::Error;
};
/// Malformed or unexpected message on the predictor wire protocol.
struct ProtocolError : Error {
  using Error::Error;
};
/// A predictor call failed; the message names the affected sample range.
struct PredictorFailure : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Diagnostics. Warnings go to stderr unless a handler is installed.

using WarningHandler = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
inline WarningHandler& warning_handler() {
  static WarningHandler h;
  return h;
}
}  // namespace detail

/// Installs a process-wide warning sink and returns the previous one.
inline WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(detail::warning_mutex());
  return std::exchange(detail::warning_handler(), std::move(handler));
}

inline void warn(const std::string& message) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_handler()) {
    detail::warning_handler()(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

// ---------------------------------------------------------------------------
// MelSpectrogram

enum class Scale : std::uint32_t { linear = 0, log = 1, log_standardized = 2 };

inline std::string_view to_string(Scale s) {
  switch (s) {
    case Scale::linear: return "linear";
    case Scale::log: return "log";
    case Scale::log_standardized: return "log_standardized";
  }
  return "unknown";
}

inline Scale scale_from_string(std::string_view name) {
  if (name == "linear") return Scale::linear;
  if (name == "log") return Scale::log;
  if (name == "log_standardized") return Scale::log_standardized;
  throw FormatError("unknown spectrogram scale '" + std::string(name) + "'");
}

/// Frame-major (time x frequency) magnitude grid.
class MelSpectrogram {
 public:
  MelSpectrogram() = default;

  MelSpectrogram(std::size_t n_frames, std::size_t n_bands, std::vector<float> values,
                 float hop_seconds = 0.0f, Scale scale = Scale::linear)
      : n_frames_(n_frames),
        n_bands_(n_bands),
        hop_seconds_(hop_seconds),
        scale_(scale),
        values_(std::move(values)) {
    if (n_frames_ == 0 || n_bands_ == 0) throw ValidationError("empty spectrogram");
    if (values_.size() != n_frames_ * n_bands_) {
      throw ValidationError("spectrogram payload has " + std::to_string(values_.size()) +
                            " values, expected " + std::to_string(n_frames_ * n_bands_));
    }
    auto bad = std::find_if(values_.begin(), values_.end(),
                            [](float v) { return !std::isfinite(v); });
    if (bad != values_.end()) {
      auto idx = static_cast<std::size_t>(bad - values_.begin());
      throw ValidationError("non-finite value at frame " + std::to_string(idx / n_bands_) +
                            ", band " + std::to_string(idx % n_bands_));
    }
  }

  /// Builds from nested rows; every row must have the same length.
  static MelSpectrogram from_rows(const std::vector<std::vector<float>>& rows,
                                  float hop_seconds = 0.0f, Scale scale = Scale::linear) {
    if (rows.empty() || rows.front().empty()) throw ValidationError("empty spectrogram");
    std::vector<float> flat;
    flat.reserve(rows.size() * rows.front().size());
    for (const auto& r : rows) {
      if (r.size() != rows.front().size()) throw ValidationError("ragged spectrogram rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return {rows.size(), rows.front().size(), std::move(flat), hop_seconds, scale};
  }

  std::size_t n_frames() const { return n_frames_; }
  std::size_t n_bands() const { return n_bands_; }
  std::size_t size() const { return values_.size(); }
  float hop_seconds() const { return hop_seconds_; }
  Scale scale() const { return scale_; }

  float at(std::size_t frame, std::size_t band) const { return values_[frame * n_bands_ + band]; }
  float& at(std::size_t frame, std::size_t band) { return values_[frame * n_bands_ + band]; }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }
  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(values_).subspan(t * n_bands_, n_bands_);
  }

  bool same_shape(const MelSpectrogram& o) const {
    return n_frames_ == o.n_frames_ && n_bands_ == o.n_bands_;
  }

  std::string shape_string() const {
    return std::to_string(n_frames_) + "x" + std::to_string(n_bands_);
  }

  MelSpectrogram with_scale(Scale s) const {
    MelSpectrogram out = *this;
    out.scale_ = s;
    return out;
  }

  /// Contiguous frames [start, start + count).
  MelSpectrogram slice_frames(std::size_t start, std::size_t count) const {
    if (count == 0 || start + count > n_frames_) throw ValidationError("frame slice out of range");
    std::vector<float> v(values_.begin() + static_cast<std::ptrdiff_t>(start * n_bands_),
                         values_.begin() + static_cast<std::ptrdiff_t>((start + count) * n_bands_));
    return {count, n_bands_, std::move(v), hop_seconds_, scale_};
  }

  friend bool operator==(const MelSpectrogram& a, const MelSpectrogram& b) {
    return a.n_frames_ == b.n_frames_ && a.n_bands_ == b.n_bands_ &&
           std::bit_cast<std::uint32_t>(a.hop_seconds_) ==
               std::bit_cast<std::uint32_t>(b.hop_seconds_) &&
           a.scale_ == b.scale_ &&
           std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(float)) == 0;
  }

 private:
  std::size_t n_frames_ = 0;
  std::size_t n_bands_ = 0;
  float hop_seconds_ = 0.0f;
  Scale scale_ = Scale::linear;
  std::vector<float> values_;
};

// ---------------------------------------------------------------------------
// Statistics

struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t n_bands() const { return mean.size(); }

  void validate() const {
    if (mean.size() != stddev.size()) throw ValidationError("band stats mean/std length mismatch");
    if (mean.empty()) throw ValidationError("band stats are empty");
    for (std::size_t b = 0; b < stddev.size(); ++b) {
      if (!(stddev[b] > 0.0) || !std::isfinite(stddev[b]) || !std::isfinite(mean[b])) {
        throw ValidationError("band " + std::to_string(b) +
                              " has non-positive standard deviation (zero-variance band)");
      }
    }
  }
};

struct DatasetStats {
  double min_value = 0.0;
  BandStats band_stats;
  std::size_t n_excerpts = 0;
};

/// Streaming pooled statistics. Per-band moments are merged with Chan's
/// update so partial accumulators can be combined in any order.
class DatasetStatsAccumulator {
 public:
  void add(const MelSpectrogram& spec) {
    if (n_excerpts_ == 0) {
      n_bands_ = spec.n_bands();
      count_.assign(n_bands_, 0.0);
      mean_.assign(n_bands_, 0.0);
      m2_.assign(n_bands_, 0.0);
    } else if (spec.n_bands() != n_bands_) {
      throw ValidationError("mismatched n_bands: expected " + std::to_string(n_bands_) + ", got " +
                            std::to_string(spec.n_bands()));
    }
    for (std::size_t b = 0; b < n_bands_; ++b) {
      double n = 0.0, mean = 0.0, m2 = 0.0;
      for (std::size_t t = 0; t < spec.n_frames(); ++t) {
        double x = spec.at(t, b);
        n += 1.0;
        double d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
        min_value_ = std::min(min_value_, x);
      }
      merge_band(b, n, mean, m2);
    }
    ++n_excerpts_;
  }

  void merge(const DatasetStatsAccumulator& other) {
    if (other.n_excerpts_ == 0) return;
    if (n_excerpts_ == 0) {
      *this = other;
      return;
    }
    if (other.n_bands_ != n_bands_) throw ValidationError("mismatched n_bands in merge");
    for (std::size_t b = 0; b < n_bands_; ++b) merge_band(b, other.count_[b], other.mean_[b], other.m2_[b]);
    min_value_ = std::min(min_value_, other.min_value_);
    n_excerpts_ += other.n_excerpts_;
  }

  DatasetStats finish() const {
    if (n_excerpts_ == 0) throw ValidationError("dataset_stats needs at least one spectrogram");
    DatasetStats out;
    out.min_value = min_value_;
    out.n_excerpts = n_excerpts_;
    out.band_stats.mean = mean_;
    out.band_stats.stddev.resize(n_bands_);
    for (std::size_t b = 0; b < n_bands_; ++b) out.band_stats.stddev[b] = std::sqrt(m2_[b] / count_[b]);
    out.band_stats.validate();
    return out;
  }

 private:
  void merge_band(std::size_t b, double n, double mean, double m2) {
    double na = count_[b];
    double total = na + n;
    double delta = mean - mean_[b];
    mean_[b] += delta * n / total;
    m2_[b] += m2 + delta * delta * na * n / total;
    count_[b] = total;
  }

  std::size_t n_excerpts_ = 0;
  std::size_t n_bands_ = 0;
  double min_value_ = std::numeric_limits<double>::infinity();
  std::vector<double> count_, mean_, m2_;
};

inline DatasetStats dataset_stats(std::span<const MelSpectrogram> sources) {
  DatasetStatsAccumulator acc;
  for (const auto& s : sources) acc.add(s);
  return acc.finish();
}

inline nlohmann::json to_json(const BandStats& s) {
  return {{"mean", s.mean}, {"std", s.stddev}};
}

inline nlohmann::json to_json(const DatasetStats& s) {
  return {{"min_value", s.min_value},
          {"n_excerpts", s.n_excerpts},
          {"band_stats", to_json(s.band_stats)}};
}

inline DatasetStats dataset_stats_from_json(const nlohmann::json& j) {
  try {
    DatasetStats s;
    s.min_value = j.at("min_value").get<double>();
    s.n_excerpts = j.value("n_excerpts", std::size_t{0});
    s.band_stats.mean = j.at("band_stats").at("mean").get<std::vector<double>>();
    s.band_stats.stddev = j.at("band_stats").at("std").get<std::vector<double>>();
    s.band_stats.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset stats: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Little-endian helpers shared by the file format and the wire protocol.

namespace le {

template <typename T>
T bswap(T v) {
  auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) v = bswap(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) v = bswap(v);
  return v;
}

}  // namespace le

// ---------------------------------------------------------------------------
// MELS binary format: 28-byte header, then n_frames*n_bands f32, little-endian.

inline constexpr std::uint32_t kMelsVersion = 1;
inline constexpr std::size_t kMelsHeaderBytes = 28;

inline std::string encode_mels(const MelSpectrogram& spec) {
  std::string out;
  out.reserve(kMelsHeaderBytes + spec.size() * 4);
  out.append("MELS", 4);
  le::put<std::uint32_t>(out, kMelsVersion);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.n_frames()));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.n_bands()));
  le::put<float>(out, spec.hop_seconds());
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.scale()));
  le::put<std::uint32_t>(out, 0);
  for (float v : spec.values()) le::put<float>(out, v);
  return out;
}

inline MelSpectrogram decode_mels(std::string_view bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < kMelsHeaderBytes) {
    throw FormatError(origin + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (bytes.substr(0, 4) != "MELS") throw FormatError(origin + ": bad magic");
  const char* p = bytes.data();
  auto version = le::get<std::uint32_t>(p + 4);
  if (version != kMelsVersion) {
    throw FormatError(origin + ": unsupported version " + std::to_string(version));
  }
  auto n_frames = le::get<std::uint32_t>(p + 8);
  auto n_bands = le::get<std::uint32_t>(p + 12);
  auto hop = le::get<float>(p + 16);
  auto scale = le::get<std::uint32_t>(p + 20);
  if (n_frames == 0 || n_bands == 0) throw FormatError(origin + ": empty spectrogram shape");
  if (scale > 2) throw FormatError(origin + ": unknown scale " + std::to_string(scale));
  std::size_t expected = kMelsHeaderBytes + std::size_t{n_frames} * n_bands * 4;
  if (bytes.size() != expected) {
    throw FormatError(origin + ": payload size mismatch, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  std::vector<float> values(std::size_t{n_frames} * n_bands);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = le::get<float>(p + kMelsHeaderBytes + 4 * i);
  }
  try {
    return {n_frames, n_bands, std::move(values), hop, static_cast<Scale>(scale)};
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  }
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// CSV fixtures: one frame per line; metadata lives in "<stem>.meta.json".
inline std::filesystem::path csv_sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta.json");
  return p;
}

inline MelSpectrogram parse_csv_spectrogram(std::string_view text, float hop_seconds, Scale scale) {
  std::vector<std::vector<float>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<float> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stof(cell, &used));
      } catch (const std::exception&) {
        throw FormatError("bad CSV cell '" + cell + "' on row " + std::to_string(rows.size()));
      }
    }
    rows.push_back(std::move(row));
  }
  return MelSpectrogram::from_rows(rows, hop_seconds, scale);
}

inline MelSpectrogram load_spectrogram(const std::filesystem::path& source) {
  if (source.extension() == ".csv") {
    auto meta_path = csv_sidecar_path(source);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(read_file_bytes(meta_path));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(meta_path.string() + ": " + e.what());
    }
    return parse_csv_spectrogram(read_file_bytes(source), meta.value("hop_seconds", 0.0f),
                                 scale_from_string(meta.value("scale", std::string("linear"))));
  }
  return decode_mels(read_file_bytes(source), source.string());
}

inline void save_spectrogram(const MelSpectrogram& spec, const std::filesystem::path& destination) {
  if (spec.size() == 0) throw ValidationError("empty spectrogram");
  if (destination.extension() == ".csv") {
    std::ostringstream out;
    out.precision(std::numeric_limits<float>::max_digits10);
    for (std::size_t t = 0; t < spec.n_frames(); ++t) {
      for (std::size_t b = 0; b < spec.n_bands(); ++b) out << (b ? "," : "") << spec.at(t, b);
      out << '\n';
    }
    write_file_bytes(destination, out.str());
    nlohmann::json meta = {{"hop_seconds", spec.hop_seconds()}, {"scale", std::string(to_string(spec.scale()))}};
    write_file_bytes(csv_sidecar_path(destination), meta.dump() + "\n");
    return;
  }
  write_file_bytes(destination, encode_mels(spec));
}

}  // namespace occlex
