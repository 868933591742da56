#pragma once

// Locally weighted linear surrogate over occlusion masks, and top-k
// explanations derived from its weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "occlex/core.hpp"
#include "occlex/perturbation.hpp"
#include "occlex/predictor.hpp"
#include "occlex/segmentation.hpp"

namespace occlex {

enum class SignFilter { any, positive_only };

struct ExplainerConfig {
  std::size_t n_samples = 70000;
  std::size_t top_k = 3;
  SignFilter sign_filter = SignFilter::any;
  /// Kernel width over cosine distance; +inf gives uniform weights.
  double kernel_width = 0.25;
  double ridge_lambda = 1.0;
  std::uint64_t seed = 0;
  /// Perturbed inputs realised and sent to the predictor per call.
  std::size_t batch_size = 256;

  void validate() const {
    if (n_samples == 0) throw ValidationError("n_samples must be >= 1");
    if (top_k == 0) throw ValidationError("top_k must be >= 1");
    if (!(kernel_width > 0.0)) throw ValidationError("kernel width must be > 0");
    if (!(ridge_lambda >= 0.0) || !std::isfinite(ridge_lambda)) {
      throw ValidationError("ridge lambda must be finite and >= 0");
    }
    if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  }
};

/// Coefficients smaller than this in magnitude rank as exact zeros, so
/// round-off never decides the order of components with no influence.
inline constexpr double kRankingZeroTolerance = 1e-9;

struct ExplanationEntry {
  std::size_t component = 0;
  double weight = 0.0;
  friend bool operator==(const ExplanationEntry&, const ExplanationEntry&) = default;
};

struct Explanation {
  std::vector<ExplanationEntry> entries;
  std::vector<double> coefficients;  // all N_c surrogate weights
  double intercept = 0.0;
  double prediction = 0.0;
  double r2_local = 0.0;
  SegmentationScheme scheme;
  ContentType content;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::size_t top_k = 0;

  std::vector<std::size_t> components() const {
    std::vector<std::size_t> c;
    for (const auto& e : entries) c.push_back(e.component);
    return c;
  }
};

// ---------------------------------------------------------------------------

/// exp(-d^2 / sigma^2) with d the cosine distance between z' and all-ones.
inline double proximity_weight(const OcclusionMask& mask, double kernel_width) {
  if (mask.size() == 0) throw ValidationError("empty mask");
  double d = 1.0 - std::sqrt(static_cast<double>(mask.count_present()) / static_cast<double>(mask.size()));
  if (std::isinf(kernel_width)) return 1.0;
  return std::exp(-(d * d) / (kernel_width * kernel_width));
}

struct RidgeFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
  double r2_local = 0.0;
};

/// Minimises sum_i w_i (y_i - b0 - b.x_i)^2 + lambda |b|^2 (intercept not
/// penalised) through the (p+1)-dimensional normal equations.
inline RidgeFit fit_weighted_ridge(const Eigen::MatrixXd& design, std::span<const double> targets,
                                   std::span<const double> weights, double lambda) {
  const auto n = static_cast<std::size_t>(design.rows());
  const auto p = static_cast<Eigen::Index>(design.cols());
  if (n == 0) throw ValidationError("ridge fit needs at least one sample");
  if (targets.size() != n || weights.size() != n) throw ValidationError("ridge fit size mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be >= 0");
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(targets[i])) {
      throw ValidationError("non-finite target at sample " + std::to_string(i));
    }
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw ValidationError("sample weights must be finite and >= 0");
    }
    wsum += weights[i];
  }
  if (!(wsum > 0.0)) throw ValidationError("at least one sample weight must be positive");

  double wmean = 0.0;
  for (std::size_t i = 0; i < n; ++i) wmean += weights[i] * targets[i];
  wmean /= wsum;

  RidgeFit fit;
  const bool constant = std::all_of(targets.begin(), targets.end(),
                                    [&](double y) { return y == targets[0]; });
  if (constant) {
    fit.coefficients.assign(static_cast<std::size_t>(p), 0.0);
    fit.intercept = targets[0];
    fit.r2_local = 0.0;
    return fit;
  }

  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(p + 1, p + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p + 1);
  Eigen::VectorXd row(p + 1);
  for (std::size_t i = 0; i < n; ++i) {
    auto ii = static_cast<Eigen::Index>(i);
    row(0) = 1.0;
    row.tail(p) = design.row(ii).transpose();
    normal.selfadjointView<Eigen::Lower>().rankUpdate(row, weights[i]);
    rhs += weights[i] * targets[i] * row;
  }
  normal = normal.selfadjointView<Eigen::Lower>();
  for (Eigen::Index j = 1; j <= p; ++j) normal(j, j) += lambda;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw ValidationError("singular normal equations (rank " + std::to_string(lu.rank()) + " of " +
                          std::to_string(p + 1) + "); use ridge lambda > 0");
  }
  Eigen::VectorXd beta = lu.solve(rhs);
  fit.intercept = beta(0);
  fit.coefficients.resize(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) fit.coefficients[static_cast<std::size_t>(j)] = beta(j + 1);

  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double yhat = fit.intercept + design.row(static_cast<Eigen::Index>(i)).dot(beta.tail(p));
    ss_res += weights[i] * (targets[i] - yhat) * (targets[i] - yhat);
    ss_tot += weights[i] * (targets[i] - wmean) * (targets[i] - wmean);
  }
  fit.r2_local = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  return fit;
}

inline Eigen::MatrixXd design_matrix(const SampleSet& set) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(set.n_components()));
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t c = 0; c < set.n_components(); ++c)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = set.masks[i].bits[c] ? 1.0 : 0.0;
  return x;
}

/// Orders components by |weight| (or by positive weight), ties to the lower
/// index, and truncates to k.
inline std::vector<ExplanationEntry> rank_components(std::span<const double> coefficients,
                                                     std::size_t top_k, SignFilter filter) {
  auto snap = [](double w) { return std::abs(w) <= kRankingZeroTolerance ? 0.0 : w; };
  std::vector<ExplanationEntry> all;
  for (std::size_t c = 0; c < coefficients.size(); ++c) {
    double w = snap(coefficients[c]);
    if (filter == SignFilter::positive_only && !(w > 0.0)) continue;
    all.push_back({c, coefficients[c]});
  }
  std::stable_sort(all.begin(), all.end(), [&](const auto& a, const auto& b) {
    double ka = std::abs(snap(a.weight)), kb = std::abs(snap(b.weight));
    if (ka != kb) return ka > kb;
    return a.component < b.component;
  });
  if (all.size() > top_k) all.resize(top_k);
  return all;
}

namespace detail {
template <typename F>
void with_sample_context(std::size_t first, std::size_t last, F&& f) {
  auto ctx = [&] {
    return "predictor failed on samples [" + std::to_string(first) + ", " + std::to_string(last) + "): ";
  };
  try {
    f();
  } catch (const ShapeError& e) {
    throw ShapeError(ctx() + e.what());
  } catch (const TransportError& e) {
    throw TransportError(ctx() + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(ctx() + e.what());
  } catch (const std::exception& e) {
    throw PredictorFailure(ctx() + e.what());
  }
}
}  // namespace detail

/// Explains C's prediction on `spec` with an explicit mask set.
inline Explanation explain(const MelSpectrogram& spec, const Predictor& predictor,
                           const SegmentationScheme& scheme, const ContentType& content,
                           const ExplainerConfig& config, const SampleSet& samples) {
  config.validate();
  if (samples.size() == 0) throw ValidationError("empty sample set");
  if (samples.n_components() != scheme.n_components()) {
    throw ValidationError("mask length does not match the number of components");
  }
  std::size_t top_k = config.top_k;
  if (top_k > scheme.n_components()) {
    warn("top_k " + std::to_string(top_k) + " exceeds " + std::to_string(scheme.n_components()) +
         " components; clamped");
    top_k = scheme.n_components();
  }

  Occluder occluder(spec, scheme, content);
  const std::size_t n = samples.size();
  std::vector<double> targets(n);
  std::vector<MelSpectrogram> batch(std::min(config.batch_size, n), spec);
  for (std::size_t first = 0; first < n; first += config.batch_size) {
    const std::size_t last = std::min(n, first + config.batch_size);
    for (std::size_t i = first; i < last; ++i) {
      occluder.apply(samples.masks[i], SampleStream{samples.seed, i}, batch[i - first]);
    }
    detail::with_sample_context(first, last, [&] {
      predictor.predict_into(std::span<const MelSpectrogram>(batch.data(), last - first),
                             std::span<double>(targets).subspan(first, last - first));
    });
  }

  Explanation ex;
  if (samples.masks[0] == OcclusionMask::all_ones(scheme.n_components())) {
    ex.prediction = targets[0];
  } else {
    double p = 0.0;
    detail::with_sample_context(0, 0, [&] {
      predictor.predict_into(std::span<const MelSpectrogram>(&spec, 1), std::span<double>(&p, 1));
    });
    ex.prediction = p;
  }

  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) weights[i] = proximity_weight(samples.masks[i], config.kernel_width);
  auto fit = fit_weighted_ridge(design_matrix(samples), targets, weights, config.ridge_lambda);

  ex.entries = rank_components(fit.coefficients, top_k, config.sign_filter);
  ex.coefficients = std::move(fit.coefficients);
  ex.intercept = fit.intercept;
  ex.r2_local = fit.r2_local;
  ex.scheme = scheme;
  ex.content = content;
  ex.n_samples = n;
  ex.seed = samples.seed;
  ex.top_k = top_k;
  return ex;
}

inline Explanation explain(const MelSpectrogram& spec, const Predictor& predictor,
                           const SegmentationScheme& scheme, const ContentType& content,
                           const ExplainerConfig& config) {
  config.validate();
  return explain(spec, predictor, scheme, content, config,
                 sample_masks(scheme.n_components(), config.n_samples, config.seed));
}

inline nlohmann::json to_json(const Explanation& ex) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : ex.entries) entries.push_back({{"component", e.component}, {"weight", e.weight}});
  return {{"prediction", ex.prediction},
          {"content", ex.content.name()},
          {"axis", to_string(ex.scheme.axis())},
          {"n_components", ex.scheme.n_components()},
          {"n_samples", ex.n_samples},
          {"entries", entries},
          {"intercept", ex.intercept},
          {"r2_local", ex.r2_local},
          {"seed", ex.seed}};
}

/// One row of an explanation table:
/// dataset,audio_file,index,v_prob,e_type,content,explanation
/// with v_prob to three decimals and the explanation as "i, j, k".
inline std::string format_report_row(const std::string& dataset, const std::string& audio_file,
                                     std::size_t index, const Explanation& ex) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::ostringstream comps;
  for (std::size_t i = 0; i < ex.entries.size(); ++i) comps << (i ? ", " : "") << ex.entries[i].component;
  char prob[32];
  std::snprintf(prob, sizeof prob, "%.3f", ex.prediction);
  std::ostringstream row;
  row << quote(dataset) << ',' << quote(audio_file) << ',' << index << ',' << prob << ','
      << to_string(ex.scheme.axis()) << ',' << ex.content.name() << ',' << quote(comps.str());
  return row.str();
}

}  // namespace occlex
