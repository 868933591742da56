#pragma once

// Black-box classifier interface C: spectrogram -> [0, 1] and the built-in
// reference classifiers used as test instruments.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "occlex/core.hpp"
#include "occlex/rng.hpp"
#include "occlex/segmentation.hpp"

namespace occlex {

struct Prediction {
  double probability = 0.0;
};

enum class Label { non_vocal, vocal };

inline std::string_view to_string(Label l) { return l == Label::vocal ? "vocal" : "non_vocal"; }

class DecisionThreshold {
 public:
  constexpr DecisionThreshold() = default;
  explicit DecisionThreshold(double v) : value_(v) {
    if (!(v > 0.0 && v < 1.0)) throw ValidationError("decision threshold must lie in (0, 1)");
  }
  constexpr double value() const { return value_; }

 private:
  double value_ = 0.5;
};

/// Probabilities at the threshold count as vocal.
inline Label classify(Prediction p, DecisionThreshold threshold = {}) {
  return p.probability >= threshold.value() ? Label::vocal : Label::non_vocal;
}

struct GridShape {
  std::size_t n_frames = 0;
  std::size_t n_bands = 0;
  friend bool operator==(const GridShape&, const GridShape&) = default;
  std::string str() const { return std::to_string(n_frames) + "x" + std::to_string(n_bands); }
};

/// Stateless batch classifier. Implementations must be safe to call from
/// several threads at once.
class Predictor {
 public:
  virtual ~Predictor() = default;

  /// Input shape the model accepts, if it has a fixed one.
  virtual std::optional<GridShape> expected_shape() const { return std::nullopt; }
  virtual std::string describe() const = 0;

  std::vector<Prediction> predict_batch(std::span<const MelSpectrogram> specs) const {
    std::vector<double> raw(specs.size());
    predict_into(specs, raw);
    std::vector<Prediction> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i].probability = raw[i];
    return out;
  }

  /// Same contract as predict_batch, writing probabilities into `out`.
  void predict_into(std::span<const MelSpectrogram> specs, std::span<double> out) const {
    if (out.size() != specs.size()) throw ValidationError("output span size mismatch");
    if (auto shape = expected_shape()) {
      for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].n_frames() != shape->n_frames || specs[i].n_bands() != shape->n_bands) {
          throw ShapeError("predictor expects " + shape->str() + " input, batch item " +
                           std::to_string(i) + " is " + specs[i].shape_string());
        }
      }
    }
    if (specs.empty()) return;
    predict_raw(specs, out);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!std::isfinite(out[i])) {
        throw ValidationError("predictor returned a non-finite probability for batch item " +
                              std::to_string(i));
      }
      out[i] = std::clamp(out[i], 0.0, 1.0);
    }
  }

 protected:
  virtual void predict_raw(std::span<const MelSpectrogram> specs, std::span<double> out) const = 0;
};

using PredictorPtr = std::shared_ptr<const Predictor>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Built-ins

class ConstantPredictor final : public Predictor {
 public:
  explicit ConstantPredictor(double p) : p_(p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("constant probability must lie in [0, 1]");
  }
  std::string describe() const override { return "constant(" + std::to_string(p_) + ")"; }

 protected:
  void predict_raw(std::span<const MelSpectrogram>, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), p_);
  }

 private:
  double p_;
};

/// sigmoid(gain * mean(bins in bands [band_lo, band_hi)) + bias).
class EnergyBandPredictor final : public Predictor {
 public:
  EnergyBandPredictor(std::size_t band_lo, std::size_t band_hi, double gain, double bias)
      : lo_(band_lo), hi_(band_hi), gain_(gain), bias_(bias) {
    if (lo_ >= hi_) throw ValidationError("energy band needs band_lo < band_hi");
  }
  std::string describe() const override {
    return "energy_band(" + std::to_string(lo_) + "," + std::to_string(hi_) + ")";
  }

  double mean_energy(const MelSpectrogram& s) const {
    if (hi_ > s.n_bands()) {
      throw ShapeError("energy band [" + std::to_string(lo_) + ", " + std::to_string(hi_) +
                       ") exceeds " + std::to_string(s.n_bands()) + " bands");
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < s.n_frames(); ++t)
      for (std::size_t b = lo_; b < hi_; ++b) sum += s.at(t, b);
    return sum / static_cast<double>(s.n_frames() * (hi_ - lo_));
  }

 protected:
  void predict_raw(std::span<const MelSpectrogram> specs, std::span<double> out) const override {
    for (std::size_t i = 0; i < specs.size(); ++i) out[i] = sigmoid(gain_ * mean_energy(specs[i]) + bias_);
  }

 private:
  std::size_t lo_, hi_;
  double gain_, bias_;
};

/// C(z) = clamp(base + sum_j contribution_j * present_j), where a component
/// is present iff its bins equal the reference excerpt's bins exactly.
/// Linear in the presence bits by construction.
class AdditiveMaskPredictor final : public Predictor {
 public:
  AdditiveMaskPredictor(MelSpectrogram reference, SegmentationScheme scheme, double base,
                        std::vector<double> contributions)
      : reference_(std::move(reference)),
        scheme_(std::move(scheme)),
        base_(base),
        contributions_(std::move(contributions)) {
    if (!scheme_.fits(reference_)) throw ShapeError("additive_mask scheme does not fit reference");
    if (contributions_.size() != scheme_.n_components()) {
      throw ValidationError("additive_mask needs one contribution per component (" +
                            std::to_string(scheme_.n_components()) + ")");
    }
  }

  std::optional<GridShape> expected_shape() const override {
    return GridShape{reference_.n_frames(), reference_.n_bands()};
  }
  std::string describe() const override { return "additive_mask"; }

  const std::vector<double>& contributions() const { return contributions_; }
  double base() const { return base_; }

  bool component_present(const MelSpectrogram& z, std::size_t c) const {
    const Region& r = scheme_.region(c);
    const std::size_t nb = reference_.n_bands();
    const float* zr = z.values().data();
    const float* xr = reference_.values().data();
    for (std::size_t t = r.frame_start; t < r.frame_end; ++t) {
      if (std::memcmp(zr + t * nb + r.band_start, xr + t * nb + r.band_start,
                      r.n_bands() * sizeof(float)) != 0)
        return false;
    }
    return true;
  }

 protected:
  void predict_raw(std::span<const MelSpectrogram> specs, std::span<double> out) const override {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      double v = base_;
      for (std::size_t c = 0; c < contributions_.size(); ++c) {
        if (contributions_[c] != 0.0 && component_present(specs[i], c)) v += contributions_[c];
      }
      out[i] = std::clamp(v, 0.0, 1.0);
    }
  }

 private:
  MelSpectrogram reference_;
  SegmentationScheme scheme_;
  double base_;
  std::vector<double> contributions_;
};

/// sigmoid(a * S + b) where S counts "near-silent" components: regions whose
/// bin variance is below epsilon and whose level sits at the floor of the
/// input (mean <= min bin of the whole input + epsilon). Constant fills at
/// or below the input minimum (zero on non-negative data, min_inp, min_data)
/// trigger it; mean_inp and gaussian fills do not. The segmentation is
/// rebuilt for each input shape from (axis, n, n_freq).
class SilenceDetector final : public Predictor {
 public:
  struct Params {
    Axis axis = Axis::temporal;
    std::size_t n = 10;
    std::size_t n_freq = 1;
    double epsilon = 1e-6;
    double a = 2.0;
    double b = -1.0;
  };

  explicit SilenceDetector(Params p) : p_(p) {}
  std::string describe() const override { return "silence_detector"; }

  std::size_t silent_components(const MelSpectrogram& z) const {
    auto scheme = segment_uniform(z.n_frames(), z.n_bands(), p_.axis, p_.n, p_.n_freq);
    const double floor = *std::min_element(z.values().begin(), z.values().end());
    std::size_t count = 0;
    for (const auto& r : scheme.regions()) {
      double mean = 0.0, m2 = 0.0, n = 0.0;
      for (std::size_t t = r.frame_start; t < r.frame_end; ++t) {
        for (std::size_t b = r.band_start; b < r.band_end; ++b) {
          double x = z.at(t, b);
          n += 1.0;
          double d = x - mean;
          mean += d / n;
          m2 += d * (x - mean);
        }
      }
      if (m2 / n < p_.epsilon && mean <= floor + p_.epsilon) ++count;
    }
    return count;
  }

 protected:
  void predict_raw(std::span<const MelSpectrogram> specs, std::span<double> out) const override {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      out[i] = sigmoid(p_.a * static_cast<double>(silent_components(specs[i])) + p_.b);
    }
  }

 private:
  Params p_;
};

/// Adds N(0, sigma) output noise keyed by the input's content hash, so the
/// same input always receives the same draw.
class NoisyPredictor final : public Predictor {
 public:
  NoisyPredictor(PredictorPtr inner, double sigma, std::uint64_t seed)
      : inner_(std::move(inner)), sigma_(sigma), seed_(seed) {
    if (!inner_) throw ValidationError("noisy predictor needs an inner predictor");
    if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be >= 0");
  }
  std::optional<GridShape> expected_shape() const override { return inner_->expected_shape(); }
  std::string describe() const override { return "noisy(" + inner_->describe() + ")"; }

 protected:
  void predict_raw(std::span<const MelSpectrogram> specs, std::span<double> out) const override {
    inner_->predict_into(specs, out);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      Rng rng(hash_floats(specs[i].values(), seed_));
      std::normal_distribution<double> normal(0.0, sigma_);
      out[i] += normal(rng);
    }
  }

 private:
  PredictorPtr inner_;
  double sigma_;
  std::uint64_t seed_;
};

/// Adapts a per-item callable.
class FunctionPredictor final : public Predictor {
 public:
  using Fn = std::function<double(const MelSpectrogram&)>;
  explicit FunctionPredictor(Fn fn, std::optional<GridShape> shape = std::nullopt,
                             std::string name = "function")
      : fn_(std::move(fn)), shape_(shape), name_(std::move(name)) {}
  std::optional<GridShape> expected_shape() const override { return shape_; }
  std::string describe() const override { return name_; }

 protected:
  void predict_raw(std::span<const MelSpectrogram> specs, std::span<double> out) const override {
    for (std::size_t i = 0; i < specs.size(); ++i) out[i] = fn_(specs[i]);
  }

 private:
  Fn fn_;
  std::optional<GridShape> shape_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// "builtin:<kind>:<args>" specs

namespace detail {
inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline double parse_double(const std::string& s, std::string_view what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("bad number '" + s + "' for " + std::string(what));
  }
}

inline std::size_t parse_count(const std::string& s, std::string_view what) {
  double v = parse_double(s, what);
  if (v < 0 || v != std::floor(v)) throw UsageError("bad count '" + s + "' for " + std::string(what));
  return static_cast<std::size_t>(v);
}
}  // namespace detail

/// Additive oracle described by a JSON file:
/// {reference, axis, components, freq_components?, base, contributions}.
/// A relative reference path resolves against the JSON file's directory.
inline std::shared_ptr<AdditiveMaskPredictor> load_additive_predictor(const std::filesystem::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(file));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  try {
    std::filesystem::path ref = j.at("reference").get<std::string>();
    if (ref.is_relative()) ref = file.parent_path() / ref;
    auto reference = load_spectrogram(ref);
    auto scheme = segment_uniform(reference.n_frames(), reference.n_bands(),
                                  axis_from_string(j.value("axis", std::string("temporal"))),
                                  j.at("components").get<std::size_t>(),
                                  j.value("freq_components", std::size_t{1}));
    return std::make_shared<AdditiveMaskPredictor>(std::move(reference), std::move(scheme),
                                                   j.value("base", 0.0),
                                                   j.at("contributions").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

/// Parses the part after "builtin:", e.g. "constant:0.7",
/// "energy:LO:HI:GAIN:BIAS", "additive:<file.json>",
/// "silence[:AXIS:N[:NFREQ]]", "noisy:SIGMA:SEED:<inner>".
inline PredictorPtr parse_builtin_predictor(std::string_view spec) {
  auto parts = detail::split(spec, ':');
  const std::string& kind = parts[0];
  auto need = [&](std::size_t n) {
    if (parts.size() < n + 1) {
      throw UsageError("builtin:" + kind + " needs " + std::to_string(n) + " argument(s)");
    }
  };
  if (kind == "constant") {
    need(1);
    return std::make_shared<ConstantPredictor>(detail::parse_double(parts[1], "constant"));
  }
  if (kind == "energy" || kind == "energy_band") {
    need(4);
    return std::make_shared<EnergyBandPredictor>(
        detail::parse_count(parts[1], "band_lo"), detail::parse_count(parts[2], "band_hi"),
        detail::parse_double(parts[3], "gain"), detail::parse_double(parts[4], "bias"));
  }
  if (kind == "additive" || kind == "additive_mask") {
    need(1);
    auto pos = spec.find(':');
    return load_additive_predictor(std::string(spec.substr(pos + 1)));
  }
  if (kind == "silence" || kind == "silence_detector") {
    SilenceDetector::Params p;
    if (parts.size() > 1) p.axis = axis_from_string(parts[1]);
    if (parts.size() > 2) p.n = detail::parse_count(parts[2], "silence components");
    if (parts.size() > 3) p.n_freq = detail::parse_count(parts[3], "silence freq components");
    return std::make_shared<SilenceDetector>(p);
  }
  if (kind == "noisy") {
    need(3);
    auto sigma = detail::parse_double(parts[1], "noise sigma");
    auto seed = detail::parse_count(parts[2], "noise seed");
    auto prefix = parts[0].size() + parts[1].size() + parts[2].size() + 3;
    auto inner = std::string(spec.substr(prefix));
    if (inner.rfind("builtin:", 0) == 0) inner = inner.substr(8);
    return std::make_shared<NoisyPredictor>(parse_builtin_predictor(inner), sigma, seed);
  }
  throw UsageError("unknown builtin predictor '" + kind + "'");
}

}  // namespace occlex
