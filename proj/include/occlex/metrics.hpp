#pragma once

// Explanation stability (unique components over repeats) and agreement
// (common components between two explanations).

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include <json.hpp>

#include "occlex/explainer.hpp"
#include "occlex/rng.hpp"

namespace occlex {

using ComponentSet = std::set<std::size_t>;

inline ComponentSet component_set(const Explanation& ex) {
  ComponentSet s;
  for (const auto& e : ex.entries) s.insert(e.component);
  return s;
}

struct StabilityResult {
  std::size_t u_n = 0;
  std::size_t k = 0;
  std::size_t top_k = 0;
  std::vector<ComponentSet> component_sets;
};

struct OverlapResult {
  std::size_t n_ce = 0;
  ComponentSet reference;
  ComponentSet other;
};

inline std::size_t count_common(const ComponentSet& a, const ComponentSet& b) {
  std::size_t n = 0;
  for (auto c : a) n += b.count(c);
  return n;
}

inline StabilityResult unique_components(std::span<const Explanation> explanations) {
  if (explanations.empty()) throw ValidationError("unique_components needs at least one explanation");
  StabilityResult r;
  r.k = explanations.size();
  r.top_k = explanations.front().top_k;
  ComponentSet all;
  for (const auto& ex : explanations) {
    if (!(ex.scheme == explanations.front().scheme)) {
      throw ValidationError("explanations use different segmentation schemes");
    }
    if (ex.top_k != r.top_k) throw ValidationError("explanations use different top_k");
    auto s = component_set(ex);
    all.insert(s.begin(), s.end());
    r.component_sets.push_back(std::move(s));
  }
  r.u_n = all.size();
  return r;
}

/// Seed of repeat `trial` under `master`.
inline std::uint64_t trial_seed(std::uint64_t master, std::size_t trial) {
  return derive_seed(master, {0x747269616cULL /* "trial" */, trial});
}

/// Explains the same input k times with seeds derived from config.seed.
inline StabilityResult stability_trial(const MelSpectrogram& spec, const Predictor& predictor,
                                       const SegmentationScheme& scheme, const ContentType& content,
                                       const ExplainerConfig& config, std::size_t k = 5) {
  if (k == 0) throw ValidationError("stability trial needs k >= 1");
  std::vector<Explanation> runs;
  runs.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    ExplainerConfig c = config;
    c.seed = trial_seed(config.seed, t);
    runs.push_back(explain(spec, predictor, scheme, content, c));
  }
  return unique_components(runs);
}

inline OverlapResult common_components(const Explanation& reference, const Explanation& other) {
  if (!(reference.scheme == other.scheme)) {
    throw ValidationError("explanations use different segmentation schemes");
  }
  if (reference.top_k != other.top_k) throw ValidationError("explanations use different top_k");
  OverlapResult r{0, component_set(reference), component_set(other)};
  r.n_ce = count_common(r.reference, r.other);
  return r;
}

struct Summary {
  std::size_t median = 0;
  std::size_t count = 0;
  std::map<std::size_t, double> proportions;
};

/// Median uses the lower of the two middle values for even counts.
inline Summary summarize(std::span<const std::size_t> values) {
  if (values.empty()) throw ValidationError("cannot summarize an empty list");
  std::vector<std::size_t> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  Summary s;
  s.count = sorted.size();
  s.median = sorted[(sorted.size() - 1) / 2];
  std::map<std::size_t, std::size_t> hist;
  for (auto v : sorted) ++hist[v];
  for (auto [v, n] : hist) s.proportions[v] = static_cast<double>(n) / static_cast<double>(s.count);
  return s;
}

inline nlohmann::json to_json(const Summary& s) {
  nlohmann::json props = nlohmann::json::object();
  for (auto [v, p] : s.proportions) props[std::to_string(v)] = p;
  return {{"median", s.median}, {"count", s.count}, {"proportions", props}};
}

}  // namespace occlex
