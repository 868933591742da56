#pragma once

// PCM WAV input and log-mel feature extraction producing fixed-size
// classifier excerpts (central frame plus symmetric context).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include <fftw3.h>

#include "occlex/core.hpp"

namespace occlex {

struct WavData {
  std::vector<float> samples;  // mono, [-1, 1]
  std::uint32_t sample_rate_hz = 0;
};

namespace detail {
inline std::uint16_t u16(const std::string& b, std::size_t at) { return le::get<std::uint16_t>(b.data() + at); }
inline std::uint32_t u32(const std::string& b, std::size_t at) { return le::get<std::uint32_t>(b.data() + at); }
}  // namespace detail

/// Decodes 16-bit PCM or 32-bit float WAV (plain or extensible header).
/// Multi-channel audio is averaged to mono.
inline WavData decode_wav(const std::string& bytes, const std::string& origin = "<memory>") {
  using detail::u16;
  using detail::u32;
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw FormatError(origin + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_at = 0, data_len = 0;
  for (std::size_t pos = 12; pos + 8 <= bytes.size();) {
    std::string id = bytes.substr(pos, 4);
    std::size_t len = u32(bytes, pos + 4);
    std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + len > bytes.size()) throw FormatError(origin + ": truncated fmt chunk");
      format = u16(bytes, body);
      channels = u16(bytes, body + 2);
      rate = u32(bytes, body + 4);
      bits = u16(bytes, body + 14);
      if (format == 0xFFFE && len >= 40) format = u16(bytes, body + 24);  // sub-format GUID prefix
      have_fmt = true;
    } else if (id == "data") {
      data_at = body;
      data_len = std::min(len, bytes.size() - body);
    }
    pos = body + len + (len & 1U);
  }
  if (!have_fmt) throw FormatError(origin + ": missing fmt chunk");
  if (data_at == 0) throw FormatError(origin + ": missing data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) {
    throw FormatError(origin + ": unsupported WAV encoding (format tag " + std::to_string(format) +
                      ", " + std::to_string(bits) + " bits); only 16-bit PCM and 32-bit float are accepted");
  }
  if (channels == 0 || rate == 0) throw FormatError(origin + ": bad channel count or sample rate");
  const std::size_t width = bits / 8;
  const std::size_t n_frames = data_len / (width * channels);
  WavData out;
  out.sample_rate_hz = rate;
  out.samples.resize(n_frames);
  const char* p = bytes.data() + data_at;
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const char* s = p + (i * channels + c) * width;
      acc += pcm16 ? le::get<std::int16_t>(s) / 32768.0 : static_cast<double>(le::get<float>(s));
    }
    out.samples[i] = static_cast<float>(acc / channels);
  }
  return out;
}

inline WavData read_wav(const std::filesystem::path& source) {
  return decode_wav(read_file_bytes(source), source.string());
}

enum class WavEncoding { pcm16, float32 };

/// Interleaved samples; used to author fixtures.
inline std::string encode_wav(const std::vector<float>& interleaved, std::uint32_t sample_rate_hz,
                              std::uint16_t channels = 1, WavEncoding enc = WavEncoding::pcm16) {
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
  std::string out = "RIFF";
  le::put<std::uint32_t>(out, 36 + data_len);
  out += "WAVEfmt ";
  le::put<std::uint32_t>(out, 16);
  le::put<std::uint16_t>(out, enc == WavEncoding::pcm16 ? 1 : 3);
  le::put<std::uint16_t>(out, channels);
  le::put<std::uint32_t>(out, sample_rate_hz);
  le::put<std::uint32_t>(out, sample_rate_hz * channels * (bits / 8));
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  le::put<std::uint16_t>(out, bits);
  out += "data";
  le::put<std::uint32_t>(out, data_len);
  for (float s : interleaved) {
    if (enc == WavEncoding::pcm16) {
      double v = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
      le::put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(v * 32768.0)));
    } else {
      le::put<float>(out, s);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mel features

struct FeatureConfig {
  std::uint32_t sample_rate_hz = 22050;
  std::size_t frame_length = 1024;
  std::size_t hop_length = 315;
  std::size_t n_bands = 80;
  double fmin_hz = 27.5;
  double fmax_hz = 8000.0;
  double log_floor = 1e-7;

  void validate() const {
    if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz && fmax_hz <= sample_rate_hz / 2.0)) {
      throw ValidationError("feature config needs 0 <= fmin < fmax <= sample_rate / 2");
    }
    if (hop_length == 0 || frame_length < hop_length) {
      throw ValidationError("feature config needs frame_length >= hop_length >= 1");
    }
    if (n_bands == 0) throw ValidationError("feature config needs n_bands >= 1");
    if (!(log_floor > 0.0)) throw ValidationError("log_floor must be > 0");
  }

  /// Frames produced by a signal of `n` samples (no padding).
  std::size_t frames_for(std::size_t n) const {
    return n < frame_length ? 0 : 1 + (n - frame_length) / hop_length;
  }
  /// Shortest signal giving `frames` frames.
  std::size_t samples_for(std::size_t frames) const {
    return frames == 0 ? 0 : frame_length + (frames - 1) * hop_length;
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters on the mel scale, each normalised to unit area
/// (weights sum to one). A filter too narrow to cover any FFT bin centre
/// falls back to the bin nearest its centre frequency.
class MelFilterbank {
 public:
  explicit MelFilterbank(const FeatureConfig& cfg) : n_bins_(cfg.frame_length / 2 + 1) {
    cfg.validate();
    const double mlo = hz_to_mel(cfg.fmin_hz), mhi = hz_to_mel(cfg.fmax_hz);
    edges_hz_.resize(cfg.n_bands + 2);
    for (std::size_t i = 0; i < edges_hz_.size(); ++i) {
      edges_hz_[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(cfg.n_bands + 1));
    }
    const double bin_hz = static_cast<double>(cfg.sample_rate_hz) / static_cast<double>(cfg.frame_length);
    weights_.assign(cfg.n_bands, std::vector<double>(n_bins_, 0.0));
    for (std::size_t m = 0; m < cfg.n_bands; ++m) {
      const double lo = edges_hz_[m], mid = edges_hz_[m + 1], hi = edges_hz_[m + 2];
      double total = 0.0;
      for (std::size_t k = 0; k < n_bins_; ++k) {
        double f = static_cast<double>(k) * bin_hz;
        double w = 0.0;
        if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
        else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
        weights_[m][k] = w;
        total += w;
      }
      if (total <= 0.0) {
        auto k = static_cast<std::size_t>(std::lround(mid / bin_hz));
        weights_[m][std::min(k, n_bins_ - 1)] = 1.0;
        total = 1.0;
      }
      for (auto& w : weights_[m]) w /= total;
    }
  }

  std::size_t n_bands() const { return weights_.size(); }
  std::size_t n_bins() const { return n_bins_; }
  double center_hz(std::size_t band) const { return edges_hz_.at(band + 1); }
  const std::vector<double>& weights(std::size_t band) const { return weights_.at(band); }

  void apply(std::span<const double> magnitude, std::span<double> out) const {
    for (std::size_t m = 0; m < weights_.size(); ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n_bins_; ++k) acc += weights_[m][k] * magnitude[k];
      out[m] = acc;
    }
  }

 private:
  std::size_t n_bins_;
  std::vector<double> edges_hz_;
  std::vector<std::vector<double>> weights_;
};

namespace detail {
// FFTW planning is not thread-safe; execution on distinct buffers is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void magnitude(std::span<double> mag) {
    fftw_execute(plan_);
    for (std::size_t k = 0; k < n_ / 2 + 1; ++k) mag[k] = std::hypot(out_[k][0], out_[k][1]);
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};
}  // namespace detail

/// Periodic-Hann magnitude STFT, mel filterbank, then ln(value + floor).
inline MelSpectrogram extract_mel(std::span<const float> samples, const FeatureConfig& cfg = {}) {
  cfg.validate();
  if (samples.size() < cfg.frame_length) {
    throw ValidationError("signal has " + std::to_string(samples.size()) +
                          " samples; at least " + std::to_string(cfg.frame_length) + " are required");
  }
  const std::size_t n_frames = cfg.frames_for(samples.size());
  MelFilterbank bank(cfg);
  detail::RealFft fft(cfg.frame_length);
  std::vector<double> window(cfg.frame_length);
  for (std::size_t i = 0; i < window.size(); ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(cfg.frame_length));
  }
  std::vector<double> mag(bank.n_bins()), mel(cfg.n_bands);
  std::vector<float> values(n_frames * cfg.n_bands);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t off = t * cfg.hop_length;
    for (std::size_t i = 0; i < cfg.frame_length; ++i) fft.input()[i] = window[i] * samples[off + i];
    fft.magnitude(mag);
    bank.apply(mag, mel);
    for (std::size_t m = 0; m < cfg.n_bands; ++m) {
      values[t * cfg.n_bands + m] = static_cast<float>(std::log(mel[m] + cfg.log_floor));
    }
  }
  return {n_frames, cfg.n_bands, std::move(values),
          static_cast<float>(static_cast<double>(cfg.hop_length) / cfg.sample_rate_hz), Scale::log};
}

inline MelSpectrogram standardize(const MelSpectrogram& spec, const BandStats& stats) {
  if (spec.scale() != Scale::log) {
    throw ValidationError("standardize expects a log-scaled spectrogram, got " + std::string(to_string(spec.scale())));
  }
  stats.validate();
  if (stats.n_bands() != spec.n_bands()) {
    throw ShapeError("band statistics cover " + std::to_string(stats.n_bands()) +
                     " bands, spectrogram has " + std::to_string(spec.n_bands()));
  }
  std::vector<float> v(spec.size());
  for (std::size_t t = 0; t < spec.n_frames(); ++t)
    for (std::size_t b = 0; b < spec.n_bands(); ++b)
      v[t * spec.n_bands() + b] = static_cast<float>((spec.at(t, b) - stats.mean[b]) / stats.stddev[b]);
  return {spec.n_frames(), spec.n_bands(), std::move(v), spec.hop_seconds(), Scale::log_standardized};
}

inline MelSpectrogram destandardize(const MelSpectrogram& spec, const BandStats& stats) {
  if (spec.scale() != Scale::log_standardized) {
    throw ValidationError("destandardize expects a standardized spectrogram");
  }
  stats.validate();
  if (stats.n_bands() != spec.n_bands()) throw ShapeError("band statistics size mismatch");
  std::vector<float> v(spec.size());
  for (std::size_t t = 0; t < spec.n_frames(); ++t)
    for (std::size_t b = 0; b < spec.n_bands(); ++b)
      v[t * spec.n_bands() + b] = static_cast<float>(spec.at(t, b) * stats.stddev[b] + stats.mean[b]);
  return {spec.n_frames(), spec.n_bands(), std::move(v), spec.hop_seconds(), Scale::log};
}

// ---------------------------------------------------------------------------
// Excerpts

inline constexpr std::size_t kDefaultContext = 57;

inline constexpr std::size_t excerpt_frames(std::size_t context = kDefaultContext) {
  return 2 * context + 1;
}

struct Excerpt {
  MelSpectrogram spec;
  std::size_t center_frame_index = 0;
  std::string source_id;
};

inline std::vector<Excerpt> slice_excerpts(const MelSpectrogram& spec, std::size_t context = kDefaultContext,
                                           std::size_t stride = 1, const std::string& source_id = {}) {
  if (stride == 0) throw ValidationError("stride must be >= 1");
  const std::size_t width = excerpt_frames(context);
  std::vector<Excerpt> out;
  if (spec.n_frames() < width) {
    warn("spectrogram" + (source_id.empty() ? std::string() : " '" + source_id + "'") + " has " +
         std::to_string(spec.n_frames()) + " frames, fewer than the " + std::to_string(width) +
         " needed for one excerpt");
    return out;
  }
  for (std::size_t start = 0; start + width <= spec.n_frames(); start += stride) {
    out.push_back({spec.slice_frames(start, width), start + context, source_id});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label files: "<seconds> <sing|nosing>" per line, each label holding until
// the next change point.

struct LabelChange {
  double seconds = 0.0;
  bool vocal = false;
};

inline std::vector<LabelChange> parse_labels(const std::string& text, const std::string& origin = "<labels>") {
  std::vector<LabelChange> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    LabelChange c;
    std::string label;
    if (!(ls >> c.seconds >> label) || (label != "sing" && label != "nosing")) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected '<seconds> sing|nosing'");
    }
    c.vocal = label == "sing";
    out.push_back(c);
  }
  std::stable_sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.seconds < b.seconds; });
  return out;
}

/// Label in force at `seconds`; before the first change point, non-vocal.
inline bool vocal_at(const std::vector<LabelChange>& labels, double seconds) {
  bool vocal = false;
  for (const auto& c : labels) {
    if (c.seconds > seconds) break;
    vocal = c.vocal;
  }
  return vocal;
}

}  // namespace occlex
