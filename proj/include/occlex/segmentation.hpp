#pragma once

// Partition of an excerpt grid into interpretable components.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "occlex/core.hpp"

namespace occlex {

enum class Axis { temporal, spectral, time_frequency };

inline std::string_view to_string(Axis a) {
  switch (a) {
    case Axis::temporal: return "temporal";
    case Axis::spectral: return "spectral";
    case Axis::time_frequency: return "tf";
  }
  return "unknown";
}

inline Axis axis_from_string(std::string_view s) {
  if (s == "temporal" || s == "time") return Axis::temporal;
  if (s == "spectral" || s == "frequency") return Axis::spectral;
  if (s == "tf" || s == "time_frequency") return Axis::time_frequency;
  throw UsageError("unknown axis '" + std::string(s) + "' (expected temporal|spectral|tf)");
}

/// Half-open rectangle [frame_start, frame_end) x [band_start, band_end).
struct Region {
  std::size_t frame_start = 0, frame_end = 0;
  std::size_t band_start = 0, band_end = 0;

  std::size_t n_frames() const { return frame_end - frame_start; }
  std::size_t n_bands() const { return band_end - band_start; }
  std::size_t area() const { return n_frames() * n_bands(); }
  bool contains(std::size_t t, std::size_t b) const {
    return t >= frame_start && t < frame_end && b >= band_start && b < band_end;
  }
  friend bool operator==(const Region&, const Region&) = default;
};

class SegmentationScheme {
 public:
  SegmentationScheme() = default;
  SegmentationScheme(Axis axis, std::size_t n_frames, std::size_t n_bands, std::vector<Region> regions)
      : axis_(axis), n_frames_(n_frames), n_bands_(n_bands), regions_(std::move(regions)) {
    validate();
  }

  Axis axis() const { return axis_; }
  std::size_t n_components() const { return regions_.size(); }
  std::size_t n_frames() const { return n_frames_; }
  std::size_t n_bands() const { return n_bands_; }
  const std::vector<Region>& regions() const { return regions_; }
  const Region& region(std::size_t c) const { return regions_.at(c); }

  bool fits(const MelSpectrogram& s) const {
    return s.n_frames() == n_frames_ && s.n_bands() == n_bands_;
  }

  /// Component whose region holds the cell.
  std::size_t component_of(std::size_t frame, std::size_t band) const {
    if (frame >= n_frames_ || band >= n_bands_) {
      throw ValidationError("cell (" + std::to_string(frame) + ", " + std::to_string(band) +
                            ") outside " + std::to_string(n_frames_) + "x" +
                            std::to_string(n_bands_) + " grid");
    }
    for (std::size_t c = 0; c < regions_.size(); ++c) {
      if (regions_[c].contains(frame, band)) return c;
    }
    throw ValidationError("cell not covered by any region");  // unreachable for valid schemes
  }

  friend bool operator==(const SegmentationScheme&, const SegmentationScheme&) = default;

 private:
  void validate() const {
    if (regions_.empty()) throw ValidationError("segmentation has no components");
    std::size_t area = 0;
    for (const auto& r : regions_) {
      if (r.frame_start >= r.frame_end || r.band_start >= r.band_end || r.frame_end > n_frames_ ||
          r.band_end > n_bands_) {
        throw ValidationError("degenerate or out-of-grid region");
      }
      area += r.area();
    }
    // Equal total area plus pairwise disjointness means the union is the grid.
    if (area != n_frames_ * n_bands_) throw ValidationError("regions do not cover the grid");
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      for (std::size_t j = i + 1; j < regions_.size(); ++j) {
        const auto &a = regions_[i], &b = regions_[j];
        bool overlap = a.frame_start < b.frame_end && b.frame_start < a.frame_end &&
                       a.band_start < b.band_end && b.band_start < a.band_end;
        if (overlap) throw ValidationError("regions overlap");
      }
    }
  }

  Axis axis_ = Axis::temporal;
  std::size_t n_frames_ = 0, n_bands_ = 0;
  std::vector<Region> regions_;
};

namespace detail {
// Sizes differ by at most one; the remainder goes to the earliest parts.
inline std::vector<std::size_t> split_bounds(std::size_t length, std::size_t parts) {
  std::vector<std::size_t> bounds{0};
  std::size_t base = length / parts, extra = length % parts;
  for (std::size_t i = 0; i < parts; ++i) bounds.push_back(bounds.back() + base + (i < extra ? 1 : 0));
  return bounds;
}
}  // namespace detail

/// Uniform split along `axis`. For time_frequency the grid is n x n_freq,
/// indexed row-major (time, then frequency).
inline SegmentationScheme segment_uniform(std::size_t n_frames, std::size_t n_bands, Axis axis,
                                          std::size_t n, std::size_t n_freq = 1) {
  if (n_frames == 0 || n_bands == 0) throw ValidationError("empty grid");
  std::size_t n_t = 1, n_f = 1;
  switch (axis) {
    case Axis::temporal: n_t = n; break;
    case Axis::spectral: n_f = n; break;
    case Axis::time_frequency: n_t = n; n_f = n_freq; break;
  }
  if (n_t == 0 || n_f == 0) throw ValidationError("number of components must be at least 1");
  if (n_t > n_frames) {
    throw ValidationError(std::to_string(n_t) + " temporal components exceed " +
                          std::to_string(n_frames) + " frames");
  }
  if (n_f > n_bands) {
    throw ValidationError(std::to_string(n_f) + " spectral components exceed " +
                          std::to_string(n_bands) + " bands");
  }
  auto tb = detail::split_bounds(n_frames, n_t);
  auto fb = detail::split_bounds(n_bands, n_f);
  std::vector<Region> regions;
  regions.reserve(n_t * n_f);
  for (std::size_t i = 0; i < n_t; ++i) {
    for (std::size_t j = 0; j < n_f; ++j) regions.push_back({tb[i], tb[i + 1], fb[j], fb[j + 1]});
  }
  return {axis, n_frames, n_bands, std::move(regions)};
}

/// Temporal segmentation cut at the given frames.
inline SegmentationScheme segment_at_boundaries(std::size_t n_frames, std::size_t n_bands,
                                                const std::vector<std::size_t>& boundary_frames) {
  std::vector<Region> regions;
  std::size_t prev = 0;
  for (auto b : boundary_frames) {
    if (b == 0 || b >= n_frames) {
      throw ValidationError("boundary " + std::to_string(b) + " outside (0, " +
                            std::to_string(n_frames) + ")");
    }
    if (b <= prev && !regions.empty()) throw ValidationError("boundaries must be strictly ascending");
    regions.push_back({prev, b, 0, n_bands});
    prev = b;
  }
  regions.push_back({prev, n_frames, 0, n_bands});
  return {Axis::temporal, n_frames, n_bands, std::move(regions)};
}

inline nlohmann::json to_json(const SegmentationScheme& s) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : s.regions()) {
    regions.push_back({r.frame_start, r.frame_end, r.band_start, r.band_end});
  }
  return {{"axis", to_string(s.axis())},
          {"n_components", s.n_components()},
          {"n_frames", s.n_frames()},
          {"n_bands", s.n_bands()},
          {"regions", regions}};
}

inline SegmentationScheme scheme_from_json(const nlohmann::json& j) {
  try {
    std::vector<Region> regions;
    for (const auto& r : j.at("regions")) {
      regions.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>(),
                         r.at(2).get<std::size_t>(), r.at(3).get<std::size_t>()});
    }
    return {axis_from_string(j.at("axis").get<std::string>()), j.at("n_frames").get<std::size_t>(),
            j.at("n_bands").get<std::size_t>(), std::move(regions)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed segmentation: ") + e.what());
  }
}

}  // namespace occlex
