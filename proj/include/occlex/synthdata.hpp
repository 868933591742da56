#pragma once

// Ground-truth annotated excerpts spliced from aligned vocal/instrumental
// stems, and content-type selection by overlap with that ground truth.

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "occlex/explainer.hpp"
#include "occlex/metrics.hpp"
#include "occlex/parallel.hpp"
#include "occlex/predictor.hpp"
#include "occlex/rng.hpp"
#include "occlex/segmentation.hpp"

namespace occlex {

inline constexpr std::size_t kSynthComponents = 10;
inline constexpr std::size_t kSynthVocalComponents = 3;
inline constexpr std::size_t kSynthPairsPerSong = 10;
inline constexpr std::size_t kSynthVariantsPerPair = 4;

struct StemPair {
  MelSpectrogram vocal;
  MelSpectrogram instrumental;
  std::string song_id;

  void validate() const {
    if (!vocal.same_shape(instrumental) || vocal.hop_seconds() != instrumental.hop_seconds()) {
      throw ValidationError("stems of '" + song_id + "' are not aligned (shape or hop differ)");
    }
  }
};

struct AlignedExcerpts {
  MelSpectrogram vocal;
  MelSpectrogram instrumental;
  std::size_t offset_frame = 0;
};

struct SynthSource {
  std::string song_id;
  std::size_t offset_frame = 0;
  std::size_t variant = 0;
};

struct SynthExcerpt {
  MelSpectrogram spec;
  std::array<std::size_t, kSynthVocalComponents> vocal_components{};
  SegmentationScheme scheme;
  SynthSource source;

  ComponentSet vocal_set() const { return {vocal_components.begin(), vocal_components.end()}; }
  /// Stable name used for files and per-excerpt seeds.
  std::string id() const {
    return source.song_id + "_" + std::to_string(source.offset_frame) + "_v" + std::to_string(source.variant);
  }
};

/// Draws n_pairs distinct offsets uniformly and cuts both stems there.
inline std::vector<AlignedExcerpts> sample_aligned_excerpts(const StemPair& pair, std::size_t n_pairs,
                                                            std::size_t frames, std::uint64_t seed) {
  pair.validate();
  const std::size_t length = pair.vocal.n_frames();
  if (length < frames) {
    throw ValidationError("stem '" + pair.song_id + "' has " + std::to_string(length) +
                          " frames, shorter than the " + std::to_string(frames) + "-frame excerpt");
  }
  const std::size_t n_offsets = length - frames + 1;
  if (n_pairs > n_offsets) {
    throw ValidationError("stem '" + pair.song_id + "' admits only " + std::to_string(n_offsets) +
                          " distinct offsets, " + std::to_string(n_pairs) + " requested");
  }
  // Partial Fisher-Yates over the offset range.
  std::vector<std::size_t> offsets(n_offsets);
  std::iota(offsets.begin(), offsets.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x6f6666ULL /* "off" */}));
  for (std::size_t i = 0; i < n_pairs; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_offsets - 1);
    std::swap(offsets[i], offsets[pick(rng)]);
  }
  std::vector<AlignedExcerpts> out;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    out.push_back({pair.vocal.slice_frames(offsets[i], frames), pair.instrumental.slice_frames(offsets[i], frames),
                   offsets[i]});
  }
  return out;
}

/// Instrumental excerpt with three temporal components replaced by the
/// vocal excerpt's content.
inline SynthExcerpt mix_excerpt(const MelSpectrogram& vocal, const MelSpectrogram& instrumental,
                                std::array<std::size_t, kSynthVocalComponents> vocal_components,
                                SynthSource source = {}) {
  if (!vocal.same_shape(instrumental)) throw ShapeError("vocal and instrumental excerpts differ in shape");
  auto scheme = segment_uniform(instrumental.n_frames(), instrumental.n_bands(), Axis::temporal, kSynthComponents);
  std::array<bool, kSynthComponents> chosen{};
  for (auto c : vocal_components) {
    if (c >= kSynthComponents) throw ValidationError("vocal component index " + std::to_string(c) + " out of range");
    if (chosen[c]) throw ValidationError("duplicate vocal component index " + std::to_string(c));
    chosen[c] = true;
  }
  MelSpectrogram out = instrumental;
  for (auto c : vocal_components) {
    const Region& r = scheme.region(c);
    for (std::size_t t = r.frame_start; t < r.frame_end; ++t)
      for (std::size_t b = r.band_start; b < r.band_end; ++b) out.at(t, b) = vocal.at(t, b);
  }
  std::sort(vocal_components.begin(), vocal_components.end());
  return {std::move(out), vocal_components, std::move(scheme), std::move(source)};
}

/// Per song: 10 aligned pairs x `variants_per_pair` splices, each with its
/// own uniformly drawn set of three vocal components.
inline std::vector<SynthExcerpt> generate_dataset(const std::vector<StemPair>& pairs, std::size_t variants_per_pair,
                                                  std::uint64_t seed, std::size_t frames = 115) {
  if (pairs.empty()) throw ValidationError("generate_dataset needs at least one stem pair");
  std::vector<SynthExcerpt> out;
  for (const auto& pair : pairs) {
    const std::uint64_t song_seed = derive_seed(seed, pair.song_id);
    auto aligned = sample_aligned_excerpts(pair, kSynthPairsPerSong, frames, song_seed);
    for (std::size_t p = 0; p < aligned.size(); ++p) {
      for (std::size_t v = 0; v < variants_per_pair; ++v) {
        Rng rng(derive_seed(song_seed, {0x766172ULL /* "var" */, p, v}));
        std::array<std::size_t, kSynthComponents> idx{};
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < kSynthVocalComponents; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, kSynthComponents - 1);
          std::swap(idx[i], idx[pick(rng)]);
        }
        out.push_back(mix_excerpt(aligned[p].vocal, aligned[p].instrumental, {idx[0], idx[1], idx[2]},
                                  {pair.song_id, aligned[p].offset_frame, v}));
      }
    }
  }
  return out;
}

inline std::vector<SynthExcerpt> filter_true_positives(const std::vector<SynthExcerpt>& excerpts,
                                                       const Predictor& predictor,
                                                       DecisionThreshold threshold = {}) {
  std::vector<SynthExcerpt> kept;
  constexpr std::size_t kBatch = 64;
  for (std::size_t first = 0; first < excerpts.size(); first += kBatch) {
    const std::size_t last = std::min(excerpts.size(), first + kBatch);
    std::vector<MelSpectrogram> batch;
    for (std::size_t i = first; i < last; ++i) batch.push_back(excerpts[i].spec);
    auto preds = predictor.predict_batch(batch);
    for (std::size_t i = first; i < last; ++i) {
      if (classify(preds[i - first], threshold) == Label::vocal) kept.push_back(excerpts[i]);
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Content selection

struct ContentSelection {
  std::string content;
  std::array<std::size_t, kSynthVocalComponents + 1> n_ce_histogram{};  // index = N_ce
  double full_match_proportion = 0.0;
  double at_least_two_proportion = 0.0;
};

struct SelectionReport {
  std::vector<ContentSelection> per_content;  // in the order given
  std::vector<std::string> ranking;           // by full-match proportion, then at-least-two
  std::size_t n_true_positives = 0;
  std::vector<std::vector<std::size_t>> n_ce;  // [excerpt][content]
};

/// Predictor used for one excerpt; lets ground-truth oracles be built per excerpt.
using PredictorProvider = std::function<PredictorPtr(const SynthExcerpt&)>;

/// Rigged oracle: additive over the excerpt's own components, +1/3 on each
/// annotated vocal component.
inline PredictorPtr ground_truth_oracle(const SynthExcerpt& ex) {
  std::vector<double> contrib(ex.scheme.n_components(), 0.0);
  for (auto c : ex.vocal_components) contrib[c] = 1.0 / 3.0;
  return std::make_shared<AdditiveMaskPredictor>(ex.spec, ex.scheme, 0.0, std::move(contrib));
}

inline SelectionReport select_content(const std::vector<SynthExcerpt>& excerpts, const PredictorProvider& provider,
                                      const std::vector<ContentType>& contents, ExplainerConfig config,
                                      std::size_t jobs = 1) {
  if (contents.empty()) throw ValidationError("select_content needs at least one content type");
  config.sign_filter = SignFilter::positive_only;
  config.top_k = kSynthVocalComponents;
  SelectionReport report;
  report.n_true_positives = excerpts.size();
  report.n_ce.assign(excerpts.size(), std::vector<std::size_t>(contents.size(), 0));
  parallel_for(excerpts.size(), jobs, [&](std::size_t i) {
    const auto& ex = excerpts[i];
    auto predictor = provider(ex);
    ExplainerConfig c = config;
    c.seed = derive_seed(config.seed, ex.id());
    for (std::size_t k = 0; k < contents.size(); ++k) {
      auto e = explain(ex.spec, *predictor, ex.scheme, contents[k], c);
      report.n_ce[i][k] = count_common(component_set(e), ex.vocal_set());
    }
  });
  for (std::size_t k = 0; k < contents.size(); ++k) {
    ContentSelection sel;
    sel.content = contents[k].name();
    for (const auto& row : report.n_ce) ++sel.n_ce_histogram[row[k]];
    double n = static_cast<double>(std::max<std::size_t>(excerpts.size(), 1));
    sel.full_match_proportion = excerpts.empty() ? 0.0 : sel.n_ce_histogram[3] / n;
    sel.at_least_two_proportion = excerpts.empty() ? 0.0 : (sel.n_ce_histogram[2] + sel.n_ce_histogram[3]) / n;
    report.per_content.push_back(sel);
  }
  std::vector<std::size_t> order(contents.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    const auto &x = report.per_content[a], &y = report.per_content[b];
    if (x.full_match_proportion != y.full_match_proportion) return x.full_match_proportion > y.full_match_proportion;
    return x.at_least_two_proportion > y.at_least_two_proportion;
  });
  for (auto k : order) report.ranking.push_back(report.per_content[k].content);
  return report;
}

inline SelectionReport select_content(const std::vector<SynthExcerpt>& excerpts, PredictorPtr predictor,
                                      const std::vector<ContentType>& contents, ExplainerConfig config,
                                      std::size_t jobs = 1) {
  return select_content(
      excerpts, [p = std::move(predictor)](const SynthExcerpt&) { return p; }, contents, config, jobs);
}

inline nlohmann::json to_json(const SelectionReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& s : r.per_content) {
    per.push_back({{"content", s.content},
                   {"full_match_proportion", s.full_match_proportion},
                   {"at_least_two_proportion", s.at_least_two_proportion},
                   {"n_ce_histogram", s.n_ce_histogram}});
  }
  return {{"n_true_positives", r.n_true_positives}, {"per_content", per}, {"ranking", r.ranking}};
}

/// Annotation line: {excerpt_file, song_id, offset_frame, variant, vocal_components}.
inline nlohmann::json annotation_json(const SynthExcerpt& ex, const std::string& excerpt_file) {
  return {{"excerpt_file", excerpt_file},
          {"song_id", ex.source.song_id},
          {"offset_frame", ex.source.offset_frame},
          {"variant", ex.source.variant},
          {"vocal_components", ex.vocal_components}};
}

}  // namespace occlex
