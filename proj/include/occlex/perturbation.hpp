#pragma once

// Occlusion masks in interpretable space and their realisation as perturbed
// spectrograms under a content type.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "occlex/core.hpp"
#include "occlex/rng.hpp"
#include "occlex/segmentation.hpp"

namespace occlex {

// ---------------------------------------------------------------------------
// Masks

/// One bit per component: 1 keeps the component, 0 occludes it.
struct OcclusionMask {
  std::vector<std::uint8_t> bits;

  OcclusionMask() = default;
  explicit OcclusionMask(std::vector<std::uint8_t> b) : bits(std::move(b)) {}
  static OcclusionMask all_ones(std::size_t n) { return OcclusionMask(std::vector<std::uint8_t>(n, 1)); }

  std::size_t size() const { return bits.size(); }
  bool present(std::size_t c) const { return bits[c] != 0; }
  std::size_t count_present() const {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
  }
  /// Bits packed little-endian into an integer; only meaningful for n <= 64.
  std::uint64_t packed() const {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bits.size() && i < 64; ++i) v |= std::uint64_t{bits[i] != 0} << i;
    return v;
  }
  friend bool operator==(const OcclusionMask&, const OcclusionMask&) = default;
};

struct SampleSet {
  std::vector<OcclusionMask> masks;
  std::uint64_t seed = 0;

  std::size_t size() const { return masks.size(); }
  std::size_t n_components() const { return masks.empty() ? 0 : masks.front().size(); }
};

/// masks[0] is the unperturbed instance; the rest are i.i.d. Bernoulli(1/2)
/// per component, each drawn from its own (seed, index) stream.
inline SampleSet sample_masks(std::size_t n_components, std::size_t n_samples, std::uint64_t seed) {
  if (n_components == 0) throw ValidationError("sample_masks needs at least one component");
  if (n_samples == 0) throw ValidationError("sample_masks needs n_samples >= 1");
  SampleSet set;
  set.seed = seed;
  set.masks.reserve(n_samples);
  set.masks.push_back(OcclusionMask::all_ones(n_components));
  const std::uint64_t stream = derive_seed(seed, 0x6d61736bULL);  // "mask"
  for (std::size_t i = 1; i < n_samples; ++i) {
    std::vector<std::uint8_t> bits(n_components);
    std::uint64_t word = 0;
    for (std::size_t c = 0; c < n_components; ++c) {
      if (c % 64 == 0) word = derive_seed(stream, {i, c / 64});
      bits[c] = static_cast<std::uint8_t>((word >> (c % 64)) & 1U);
    }
    set.masks.emplace_back(std::move(bits));
  }
  return set;
}

/// Every one of the 2^n masks exactly once, all-ones first.
inline SampleSet exhaustive_masks(std::size_t n_components) {
  if (n_components == 0 || n_components > 24) {
    throw ValidationError("exhaustive enumeration supports 1..24 components");
  }
  const std::uint64_t full = (std::uint64_t{1} << n_components) - 1;
  SampleSet set;
  set.masks.reserve(full + 1);
  for (std::uint64_t k = 0; k <= full; ++k) {
    std::uint64_t code = full - k;
    std::vector<std::uint8_t> bits(n_components);
    for (std::size_t c = 0; c < n_components; ++c) bits[c] = static_cast<std::uint8_t>((code >> c) & 1U);
    set.masks.emplace_back(std::move(bits));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Content types

enum class ContentKind { zero, min_data, min_inp, mean_inp, gaussian_std };

inline std::string_view to_string(ContentKind k) {
  switch (k) {
    case ContentKind::zero: return "zero";
    case ContentKind::min_data: return "min_data";
    case ContentKind::min_inp: return "min_inp";
    case ContentKind::mean_inp: return "mean_inp";
    case ContentKind::gaussian_std: return "gaussian_std";
  }
  return "unknown";
}

inline ContentKind content_kind_from_string(std::string_view s) {
  if (s == "zero") return ContentKind::zero;
  if (s == "min_data") return ContentKind::min_data;
  if (s == "min_inp") return ContentKind::min_inp;
  if (s == "mean_inp") return ContentKind::mean_inp;
  if (s == "gaussian_std" || s == "gaussian") return ContentKind::gaussian_std;
  throw UsageError("unknown content type '" + std::string(s) +
                   "' (expected zero|min_data|min_inp|mean_inp|gaussian_std)");
}

struct ContentType {
  ContentKind kind = ContentKind::zero;
  double min_data_value = 0.0;                    // min_data only
  std::shared_ptr<const BandStats> band_stats;   // gaussian_std on non-standardized input

  static ContentType zero() { return {ContentKind::zero, 0.0, nullptr}; }
  static ContentType min_data(double v) {
    if (!std::isfinite(v)) throw ValidationError("min_data value must be finite");
    return {ContentKind::min_data, v, nullptr};
  }
  static ContentType min_inp() { return {ContentKind::min_inp, 0.0, nullptr}; }
  static ContentType mean_inp() { return {ContentKind::mean_inp, 0.0, nullptr}; }
  static ContentType gaussian_std(std::shared_ptr<const BandStats> stats = nullptr) {
    if (stats) stats->validate();
    return {ContentKind::gaussian_std, 0.0, std::move(stats)};
  }

  std::string name() const { return std::string(to_string(kind)); }
  bool is_scalar() const { return kind != ContentKind::gaussian_std; }
};

/// Builds a content type by name; `stats` supplies min_data and band statistics.
inline ContentType make_content(std::string_view name, const DatasetStats* stats = nullptr) {
  switch (content_kind_from_string(name)) {
    case ContentKind::zero: return ContentType::zero();
    case ContentKind::min_inp: return ContentType::min_inp();
    case ContentKind::mean_inp: return ContentType::mean_inp();
    case ContentKind::min_data:
      if (!stats) throw UsageError("content min_data requires dataset statistics (--stats)");
      return ContentType::min_data(stats->min_value);
    case ContentKind::gaussian_std:
      return ContentType::gaussian_std(stats ? std::make_shared<BandStats>(stats->band_stats) : nullptr);
  }
  throw UsageError("unknown content type");
}

/// Identifies the gaussian substream of one (sample, component) pair.
struct SampleStream {
  std::uint64_t seed = 0;
  std::size_t sample_index = 0;
};

namespace detail {
inline std::uint64_t noise_seed(const SampleStream& s, std::size_t component) {
  return derive_seed(s.seed, {0x6e6f697365ULL /* "noise" */, s.sample_index, component});
}
}  // namespace detail

/// Precomputes per-excerpt fill statistics and realises masks against one
/// reference spectrogram. Immutable after construction.
class Occluder {
 public:
  Occluder(const MelSpectrogram& spec, const SegmentationScheme& scheme, ContentType content)
      : spec_(spec), scheme_(scheme), content_(std::move(content)) {
    if (!scheme_.fits(spec_)) {
      throw ShapeError("scheme grid " + std::to_string(scheme_.n_frames()) + "x" +
                       std::to_string(scheme_.n_bands()) + " does not match spectrogram " +
                       spec_.shape_string());
    }
    switch (content_.kind) {
      case ContentKind::zero: scalar_ = 0.0f; break;
      case ContentKind::min_data: scalar_ = static_cast<float>(content_.min_data_value); break;
      case ContentKind::min_inp:
        scalar_ = *std::min_element(spec_.values().begin(), spec_.values().end());
        break;
      case ContentKind::mean_inp: {
        double sum = std::accumulate(spec_.values().begin(), spec_.values().end(), 0.0);
        scalar_ = static_cast<float>(sum / static_cast<double>(spec_.size()));
        break;
      }
      case ContentKind::gaussian_std:
        if (spec_.scale() != Scale::log_standardized) {
          if (!content_.band_stats) {
            throw ValidationError(
                "gaussian_std on a non-standardized spectrogram requires band statistics");
          }
          if (content_.band_stats->n_bands() != spec_.n_bands()) {
            throw ShapeError("band statistics cover " + std::to_string(content_.band_stats->n_bands()) +
                             " bands, spectrogram has " + std::to_string(spec_.n_bands()));
          }
        }
        break;
    }
  }

  const MelSpectrogram& reference() const { return spec_; }
  const SegmentationScheme& scheme() const { return scheme_; }
  const ContentType& content() const { return content_; }
  /// Fill value of scalar content types.
  float scalar_fill() const { return scalar_; }

  /// Fill grid (frame-major, region-shaped) for one component.
  std::vector<float> fill_values(std::size_t component, const SampleStream& stream) const {
    const Region& r = scheme_.region(component);
    std::vector<float> out(r.area());
    write_fill(r, component, stream, [&](std::size_t t, std::size_t b, float v) {
      out[(t - r.frame_start) * r.n_bands() + (b - r.band_start)] = v;
    });
    return out;
  }

  /// Writes z into `out`, which must already have the reference's shape.
  void apply(const OcclusionMask& mask, const SampleStream& stream, MelSpectrogram& out) const {
    if (mask.size() != scheme_.n_components()) {
      throw ValidationError("mask has " + std::to_string(mask.size()) + " bits, scheme has " +
                            std::to_string(scheme_.n_components()) + " components");
    }
    if (!out.same_shape(spec_)) out = spec_;
    else std::copy(spec_.values().begin(), spec_.values().end(), out.values().begin());
    std::span<float> dst = out.values();
    const std::size_t nb = spec_.n_bands();
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (mask.present(c)) continue;
      write_fill(scheme_.region(c), c, stream,
                 [&](std::size_t t, std::size_t b, float v) { dst[t * nb + b] = v; });
    }
  }

  MelSpectrogram apply(const OcclusionMask& mask, const SampleStream& stream) const {
    MelSpectrogram out = spec_;
    apply(mask, stream, out);
    return out;
  }

 private:
  template <typename Sink>
  void write_fill(const Region& r, std::size_t component, const SampleStream& stream, Sink&& sink) const {
    if (content_.kind != ContentKind::gaussian_std) {
      for (std::size_t t = r.frame_start; t < r.frame_end; ++t)
        for (std::size_t b = r.band_start; b < r.band_end; ++b) sink(t, b, scalar_);
      return;
    }
    Rng rng(detail::noise_seed(stream, component));
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool standardized = spec_.scale() == Scale::log_standardized;
    for (std::size_t t = r.frame_start; t < r.frame_end; ++t) {
      for (std::size_t b = r.band_start; b < r.band_end; ++b) {
        double n = normal(rng);
        double v = standardized ? n : content_.band_stats->mean[b] + content_.band_stats->stddev[b] * n;
        sink(t, b, static_cast<float>(v));
      }
    }
  }

  MelSpectrogram spec_;
  SegmentationScheme scheme_;
  ContentType content_;
  float scalar_ = 0.0f;
};

/// Fill values for one component region of `spec`.
inline std::vector<float> fill_values(const ContentType& content, const MelSpectrogram& spec,
                                      const SegmentationScheme& scheme, std::size_t component,
                                      const SampleStream& stream = {}) {
  return Occluder(spec, scheme, content).fill_values(component, stream);
}

inline MelSpectrogram apply_mask(const MelSpectrogram& spec, const SegmentationScheme& scheme,
                                 const OcclusionMask& mask, const ContentType& content,
                                 const SampleStream& stream = {}) {
  return Occluder(spec, scheme, content).apply(mask, stream);
}

}  // namespace occlex
