#pragma once

// Command-line experiment harness. Each subcommand wires the library into
// one experiment and writes CSV/JSON reports; run_cli() is the entry point
// shared by the executable and the tests.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "occlex/core.hpp"
#include "occlex/explainer.hpp"
#include "occlex/frontend.hpp"
#include "occlex/metrics.hpp"
#include "occlex/parallel.hpp"
#include "occlex/perturbation.hpp"
#include "occlex/predictor.hpp"
#include "occlex/protocol.hpp"
#include "occlex/rng.hpp"
#include "occlex/segmentation.hpp"
#include "occlex/synthdata.hpp"

namespace occlex::harness {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = "0.3.0";

enum ExitCode : int { kOk = 0, kPartialFailure = 1, kUsage = 2 };

// ---------------------------------------------------------------------------
// Shared options

struct ExplainFlags {
  std::string predictor = "builtin:constant:0.5";
  std::string axis = "temporal";
  std::size_t components = 10;
  std::size_t freq_components = 1;
  std::string content = "zero";
  std::string stats;
  std::size_t samples = 70000;
  std::size_t top = 3;
  bool positive_only = false;
  double kernel_width = 0.25;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  void add_to(CLI::App& app, bool with_content = true) {
    app.add_option("--predictor", predictor, "builtin:<spec> | exec:<cmd> | tcp:<host:port>");
    app.add_option("--axis", axis, "temporal | spectral | tf");
    app.add_option("--components", components, "number of interpretable components (time axis for tf)");
    app.add_option("--freq-components", freq_components, "frequency splits for tf segmentation");
    if (with_content) app.add_option("--content", content, "zero | min_data | min_inp | mean_inp | gaussian_std");
    app.add_option("--stats", stats, "dataset statistics JSON (needed by min_data)");
    app.add_option("--samples", samples, "synthetic samples per explanation");
    app.add_option("--top", top, "components reported per explanation");
    app.add_flag("--positive-only", positive_only, "rank only positively weighted components");
    app.add_option("--kernel-width", kernel_width, "proximity kernel width");
    app.add_option("--lambda", lambda, "ridge penalty");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--jobs", jobs, "parallel workers");
  }

  ExplainerConfig config() const {
    ExplainerConfig c;
    c.n_samples = samples;
    c.top_k = top;
    c.sign_filter = positive_only ? SignFilter::positive_only : SignFilter::any;
    c.kernel_width = kernel_width;
    c.ridge_lambda = lambda;
    c.seed = seed;
    return c;
  }

  json snapshot() const {
    return {{"predictor", predictor}, {"axis", axis}, {"components", components},
            {"freq_components", freq_components}, {"content", content}, {"stats", stats},
            {"samples", samples}, {"top", top}, {"positive_only", positive_only},
            {"kernel_width", kernel_width}, {"lambda", lambda}, {"seed", seed}};
  }
};

inline std::optional<DatasetStats> load_stats(const std::string& path) {
  if (path.empty()) return std::nullopt;
  try {
    return dataset_stats_from_json(json::parse(read_file_bytes(path)));
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline ContentType content_for(const std::string& name, const std::optional<DatasetStats>& stats) {
  return make_content(name, stats ? &*stats : nullptr);
}

inline SegmentationScheme scheme_for(const MelSpectrogram& s, Axis axis, const ExplainFlags& f) {
  return segment_uniform(s.n_frames(), s.n_bands(), axis, f.components, f.freq_components);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : detail::split(s, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

/// Spectrogram files of a dataset directory, sorted by name.
inline std::vector<fs::path> list_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("dataset '" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mels") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("dataset '" + dir.string() + "' contains no .mels files");
  return files;
}

inline std::string dataset_name(const fs::path& dir) {
  auto p = dir;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

inline std::string digest_file(const fs::path& p) {
  auto bytes = read_file_bytes(p);
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
  return ss.str();
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Everything needed to rerun a command; the only part of a run's output
/// that varies between identical runs is the timestamp recorded here.
inline void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                           std::uint64_t seed, const std::vector<fs::path>& inputs) {
  json in = json::array();
  for (const auto& p : inputs) in.push_back({{"file", p.filename().string()}, {"digest", digest_file(p)}});
  json m = {{"command", command},     {"config", config},        {"master_seed", seed},
            {"inputs", in},           {"tool_version", kToolVersion}, {"timestamp", utc_timestamp()}};
  write_file_bytes(out_dir / "manifest.json", m.dump(2) + "\n");
}

inline std::string csv_header() { return "dataset,excerpt_id,axis,content,n_samples,metric,value\n"; }

inline std::string csv_row(const std::string& dataset, const std::string& excerpt, std::string_view axis,
                           const std::string& content, std::size_t n_samples, const std::string& metric,
                           std::size_t value) {
  std::ostringstream ss;
  ss << dataset << ',' << excerpt << ',' << axis << ',' << content << ',' << n_samples << ',' << metric << ','
     << value << '\n';
  return ss.str();
}

struct Failure {
  std::string excerpt;
  std::string message;
};

inline json failures_json(const std::vector<Failure>& failures) {
  json a = json::array();
  for (const auto& f : failures) a.push_back({{"excerpt", f.excerpt}, {"error", f.message}});
  return a;
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) throw IoError("cannot create output directory " + p.string());
}

inline std::uint64_t excerpt_seed(std::uint64_t master, const std::string& excerpt_id) {
  return derive_seed(master, excerpt_id);
}

// ---------------------------------------------------------------------------
// explain

inline int cmd_explain(const std::string& input, const std::string& output, const ExplainFlags& f,
                       std::ostream& out) {
  auto stats = load_stats(f.stats);
  auto content = content_for(f.content, stats);
  auto predictor = open_predictor(f.predictor);
  auto spec = load_spectrogram(input);
  auto scheme = scheme_for(spec, axis_from_string(f.axis), f);
  auto ex = explain(spec, *predictor, scheme, content, f.config());
  std::string text = to_json(ex).dump(2) + "\n";
  if (output.empty()) {
    out << text;
  } else {
    fs::path dst = output;
    if (fs::is_directory(dst)) dst /= fs::path(input).stem().string() + ".explanation.json";
    write_file_bytes(dst, text);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// Stability sweeps (U_n over N_s values, or over content types)

struct StabilityJob {
  std::size_t excerpt = 0;
  Axis axis = Axis::temporal;
  std::string content;
  std::size_t n_samples = 0;
};

struct SweepResult {
  std::vector<std::string> rows;  // CSV rows, one per job; empty on failure
  std::vector<Failure> failures;
};

inline SweepResult run_stability_jobs(const std::vector<fs::path>& files, const std::vector<StabilityJob>& jobs,
                                      const ExplainFlags& f, std::size_t repeats, const std::string& dataset) {
  auto stats = load_stats(f.stats);
  auto predictor = open_predictor(f.predictor);
  std::vector<std::string> rows(jobs.size());
  std::vector<std::optional<std::string>> errors(jobs.size());
  // Load once; failures are reported per job.
  std::vector<std::optional<MelSpectrogram>> specs(files.size());
  std::vector<std::string> load_errors(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    try {
      specs[i] = load_spectrogram(files[i]);
    } catch (const std::exception& e) {
      load_errors[i] = e.what();
    }
  }
  parallel_for(jobs.size(), f.jobs, [&](std::size_t j) {
    const auto& job = jobs[j];
    const std::string id = files[job.excerpt].stem().string();
    try {
      if (!specs[job.excerpt]) throw Error(load_errors[job.excerpt]);
      const auto& spec = *specs[job.excerpt];
      auto scheme = scheme_for(spec, job.axis, f);
      auto content = content_for(job.content, stats);
      ExplainerConfig c = f.config();
      c.n_samples = job.n_samples;
      c.seed = excerpt_seed(f.seed, id);
      auto r = stability_trial(spec, *predictor, scheme, content, c, repeats);
      rows[j] = csv_row(dataset, id, to_string(job.axis), job.content, job.n_samples, "U_n", r.u_n);
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  });
  SweepResult res;
  res.rows = std::move(rows);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (errors[j]) {
      std::string id = files[jobs[j].excerpt].stem().string();
      warn("excerpt " + id + ": " + *errors[j]);
      res.failures.push_back({id, *errors[j]});
    }
  }
  return res;
}

/// Writes the CSV and a summary grouping U_n values by `key`.
inline int finish_sweep(const fs::path& out_dir, const std::string& csv_name, const SweepResult& res,
                        const std::vector<StabilityJob>& jobs,
                        const std::function<std::string(const StabilityJob&)>& key, const std::string& key_name,
                        const std::vector<std::size_t>& values) {
  std::string csv = csv_header();
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> order;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto k = key(jobs[j]);
    if (!groups.count(k)) order.push_back(k);
    groups[k];
    if (res.rows[j].empty()) continue;
    csv += res.rows[j];
    groups[k].push_back(values[j]);
  }
  write_file_bytes(out_dir / csv_name, csv);
  json groups_json = json::array();
  for (const auto& k : order) {
    json g = {{key_name, k}};
    if (!groups[k].empty()) g["summary"] = to_json(summarize(groups[k]));
    groups_json.push_back(g);
  }
  json summary = {{"groups", groups_json}, {"failures", failures_json(res.failures)}};
  write_file_bytes(out_dir / "summary.json", summary.dump(2) + "\n");
  return res.failures.empty() ? kOk : kPartialFailure;
}

inline std::size_t row_value(const std::string& row) {
  auto pos = row.find_last_of(',');
  return static_cast<std::size_t>(std::stoul(row.substr(pos + 1)));
}

inline int cmd_ns_sweep(const std::string& dataset_dir, const std::string& ns_list, std::size_t repeats,
                        const ExplainFlags& f, const fs::path& out_dir) {
  auto files = list_dataset(dataset_dir);
  std::vector<std::size_t> ns;
  for (const auto& s : split_list(ns_list)) ns.push_back(detail::parse_count(s, "--ns"));
  if (ns.empty()) throw UsageError("--ns needs at least one sample count");
  content_for(f.content, load_stats(f.stats));  // validate before any work
  const Axis axis = axis_from_string(f.axis);
  std::vector<StabilityJob> jobs;
  for (std::size_t i = 0; i < files.size(); ++i)
    for (auto n : ns) jobs.push_back({i, axis, f.content, n});
  ensure_dir(out_dir);
  auto res = run_stability_jobs(files, jobs, f, repeats, dataset_name(dataset_dir));
  std::vector<std::size_t> values(jobs.size(), 0);
  for (std::size_t j = 0; j < jobs.size(); ++j) if (!res.rows[j].empty()) values[j] = row_value(res.rows[j]);
  json cfg = f.snapshot();
  cfg["ns"] = ns;
  cfg["repeats"] = repeats;
  write_manifest(out_dir, "ns-sweep", cfg, f.seed, files);
  return finish_sweep(out_dir, "un.csv", res, jobs, [](const StabilityJob& j) { return std::to_string(j.n_samples); },
                      "n_samples", values);
}

inline int cmd_content_stability(const std::string& dataset_dir, const std::string& contents_list,
                                 const std::string& axes_list, std::size_t repeats, const ExplainFlags& f,
                                 const fs::path& out_dir) {
  auto files = list_dataset(dataset_dir);
  auto contents = split_list(contents_list);
  auto axes = split_list(axes_list);
  if (contents.empty() || axes.empty()) throw UsageError("--contents and --axes must not be empty");
  auto stats = load_stats(f.stats);
  for (const auto& c : contents) content_for(c, stats);
  std::vector<StabilityJob> jobs;
  for (std::size_t i = 0; i < files.size(); ++i)
    for (const auto& a : axes)
      for (const auto& c : contents) jobs.push_back({i, axis_from_string(a), c, f.samples});
  ensure_dir(out_dir);
  auto res = run_stability_jobs(files, jobs, f, repeats, dataset_name(dataset_dir));
  std::vector<std::size_t> values(jobs.size(), 0);
  for (std::size_t j = 0; j < jobs.size(); ++j) if (!res.rows[j].empty()) values[j] = row_value(res.rows[j]);
  json cfg = f.snapshot();
  cfg["contents"] = contents;
  cfg["axes"] = axes;
  cfg["repeats"] = repeats;
  write_manifest(out_dir, "content-stability", cfg, f.seed, files);
  return finish_sweep(
      out_dir, "un.csv", res, jobs,
      [](const StabilityJob& j) { return std::string(to_string(j.axis)) + "/" + j.content; }, "condition", values);
}

// ---------------------------------------------------------------------------
// content-sensitivity: N_ce between the reference content and each other one

inline int cmd_content_sensitivity(const std::string& dataset_dir, const std::string& reference,
                                   const std::string& contents_list, const std::string& axes_list,
                                   const ExplainFlags& f, const fs::path& out_dir) {
  auto files = list_dataset(dataset_dir);
  auto contents = split_list(contents_list);
  auto axes = split_list(axes_list);
  if (contents.empty() || axes.empty()) throw UsageError("--contents and --axes must not be empty");
  auto stats = load_stats(f.stats);
  auto ref_content = content_for(reference, stats);
  for (const auto& c : contents) content_for(c, stats);
  auto predictor = open_predictor(f.predictor);
  const std::string dataset = dataset_name(dataset_dir);

  struct Job {
    std::size_t excerpt;
    Axis axis;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < files.size(); ++i)
    for (const auto& a : axes) jobs.push_back({i, axis_from_string(a)});
  std::vector<std::vector<std::size_t>> n_ce(jobs.size());
  std::vector<std::optional<std::string>> errors(jobs.size());
  parallel_for(jobs.size(), f.jobs, [&](std::size_t j) {
    const std::string id = files[jobs[j].excerpt].stem().string();
    try {
      auto spec = load_spectrogram(files[jobs[j].excerpt]);
      auto scheme = scheme_for(spec, jobs[j].axis, f);
      ExplainerConfig c = f.config();
      c.seed = excerpt_seed(f.seed, id);
      auto ref = explain(spec, *predictor, scheme, ref_content, c);
      for (const auto& name : contents) {
        auto other = explain(spec, *predictor, scheme, content_for(name, stats), c);
        n_ce[j].push_back(common_components(ref, other).n_ce);
      }
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  });

  ensure_dir(out_dir);
  std::string csv = csv_header();
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<Failure> failures;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const std::string id = files[jobs[j].excerpt].stem().string();
    if (errors[j]) {
      warn("excerpt " + id + ": " + *errors[j]);
      failures.push_back({id, *errors[j]});
      continue;
    }
    for (std::size_t k = 0; k < contents.size(); ++k) {
      csv += csv_row(dataset, id, to_string(jobs[j].axis), contents[k], f.samples, "N_ce", n_ce[j][k]);
      groups[std::string(to_string(jobs[j].axis)) + "/" + contents[k]].push_back(n_ce[j][k]);
    }
  }
  write_file_bytes(out_dir / "nce.csv", csv);
  json g = json::array();
  for (const auto& a : axes)
    for (const auto& c : contents) {
      std::string key = std::string(to_string(axis_from_string(a))) + "/" + c;
      json entry = {{"condition", key}, {"reference", reference}};
      if (!groups[key].empty()) entry["summary"] = to_json(summarize(groups[key]));
      g.push_back(entry);
    }
  write_file_bytes(out_dir / "summary.json",
                   json{{"groups", g}, {"failures", failures_json(failures)}}.dump(2) + "\n");
  json cfg = f.snapshot();
  cfg["reference"] = reference;
  cfg["contents"] = contents;
  cfg["axes"] = axes;
  write_manifest(out_dir, "content-sensitivity", cfg, f.seed, files);
  return failures.empty() ? kOk : kPartialFailure;
}

// ---------------------------------------------------------------------------
// synth-gen / select-content

/// Stem pairs "<song>.vocal.mels" + "<song>.instrumental.mels" in `dir`.
inline std::vector<StemPair> load_stem_pairs(const fs::path& dir, std::vector<fs::path>* inputs = nullptr) {
  if (!fs::is_directory(dir)) throw UsageError("stems '" + dir.string() + "' is not a directory");
  std::vector<std::string> songs;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto name = e.path().filename().string();
    const std::string suffix = ".vocal.mels";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      songs.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(songs.begin(), songs.end());
  if (songs.empty()) throw UsageError("no '<song>.vocal.mels' stems in " + dir.string());
  std::vector<StemPair> pairs;
  for (const auto& s : songs) {
    auto v = dir / (s + ".vocal.mels"), i = dir / (s + ".instrumental.mels");
    if (!fs::exists(i)) throw UsageError("missing instrumental stem " + i.string());
    pairs.push_back({load_spectrogram(v), load_spectrogram(i), s});
    if (inputs) {
      inputs->push_back(v);
      inputs->push_back(i);
    }
  }
  return pairs;
}

inline int cmd_synth_gen(const std::string& stems_dir, std::size_t variants, std::size_t frames,
                         std::uint64_t seed, const fs::path& out_dir) {
  std::vector<fs::path> inputs;
  auto pairs = load_stem_pairs(stems_dir, &inputs);
  auto excerpts = generate_dataset(pairs, variants, seed, frames);
  ensure_dir(out_dir);
  std::string lines;
  for (const auto& ex : excerpts) {
    std::string file = ex.id() + ".mels";
    save_spectrogram(ex.spec, out_dir / file);
    lines += annotation_json(ex, file).dump() + "\n";
  }
  write_file_bytes(out_dir / "annotations.jsonl", lines);
  write_manifest(out_dir, "synth-gen", {{"variants", variants}, {"frames", frames}}, seed, inputs);
  return kOk;
}

inline std::vector<SynthExcerpt> load_synth_dataset(const fs::path& dir) {
  auto path = dir / "annotations.jsonl";
  std::istringstream in(read_file_bytes(path));
  std::vector<SynthExcerpt> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      auto spec = load_spectrogram(dir / j.at("excerpt_file").get<std::string>());
      auto comps = j.at("vocal_components").get<std::vector<std::size_t>>();
      if (comps.size() != kSynthVocalComponents) throw FormatError("annotation needs exactly 3 vocal components");
      SynthExcerpt ex;
      ex.scheme = segment_uniform(spec.n_frames(), spec.n_bands(), Axis::temporal, kSynthComponents);
      ex.spec = std::move(spec);
      std::copy(comps.begin(), comps.end(), ex.vocal_components.begin());
      std::sort(ex.vocal_components.begin(), ex.vocal_components.end());
      ex.source = {j.at("song_id").get<std::string>(), j.at("offset_frame").get<std::size_t>(),
                   j.at("variant").get<std::size_t>()};
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

inline int cmd_select_content(const std::string& dataset_dir, const std::string& contents_list, double threshold,
                              const ExplainFlags& f, const fs::path& out_dir) {
  auto excerpts = load_synth_dataset(dataset_dir);
  auto stats = load_stats(f.stats);
  std::vector<ContentType> contents;
  for (const auto& c : split_list(contents_list)) contents.push_back(content_for(c, stats));
  if (contents.empty()) throw UsageError("--contents must not be empty");
  const DecisionThreshold thr(threshold);

  std::vector<SynthExcerpt> positives;
  PredictorProvider provider;
  if (f.predictor == "builtin:groundtruth") {
    // The rigged oracle labels every excerpt vocal by construction.
    for (const auto& ex : excerpts) {
      if (classify({ground_truth_oracle(ex)->predict_batch(std::span(&ex.spec, 1))[0]}, thr) == Label::vocal)
        positives.push_back(ex);
    }
    provider = ground_truth_oracle;
  } else {
    auto predictor = open_predictor(f.predictor);
    positives = filter_true_positives(excerpts, *predictor, thr);
    provider = [predictor](const SynthExcerpt&) { return predictor; };
  }
  auto report = select_content(positives, provider, contents, f.config(), f.jobs);

  ensure_dir(out_dir);
  json j = to_json(report);
  j["n_excerpts"] = excerpts.size();
  write_file_bytes(out_dir / "selection.json", j.dump(2) + "\n");
  std::string csv = csv_header();
  const std::string dataset = dataset_name(dataset_dir);
  for (std::size_t i = 0; i < positives.size(); ++i)
    for (std::size_t k = 0; k < contents.size(); ++k)
      csv += csv_row(dataset, positives[i].id(), "temporal", contents[k].name(), f.samples, "N_ce_gt", report.n_ce[i][k]);
  write_file_bytes(out_dir / "selection.csv", csv);
  json cfg = f.snapshot();
  cfg["contents"] = split_list(contents_list);
  cfg["threshold"] = threshold;
  write_manifest(out_dir, "select-content", cfg, f.seed, {fs::path(dataset_dir) / "annotations.jsonl"});
  return kOk;
}

// ---------------------------------------------------------------------------
// extract / stats

inline int cmd_extract(const std::string& input, const std::string& labels_dir, const std::string& stats_path,
                       std::size_t context, std::size_t stride, const FeatureConfig& cfg, const fs::path& out_dir) {
  std::vector<fs::path> wavs;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.path().extension() == ".wav") wavs.push_back(e.path());
    std::sort(wavs.begin(), wavs.end());
  } else {
    wavs.push_back(input);
  }
  if (wavs.empty()) throw UsageError("no .wav files in " + input);
  auto stats = load_stats(stats_path);
  ensure_dir(out_dir);
  std::string label_lines;
  std::vector<Failure> failures;
  for (const auto& wav : wavs) {
    const std::string stem = wav.stem().string();
    try {
      auto audio = read_wav(wav);
      if (audio.sample_rate_hz != cfg.sample_rate_hz) {
        throw ValidationError("sample rate " + std::to_string(audio.sample_rate_hz) + " Hz, expected " +
                              std::to_string(cfg.sample_rate_hz) + " Hz (resample beforehand)");
      }
      auto mel = extract_mel(audio.samples, cfg);
      if (stats) mel = standardize(mel, stats->band_stats);
      std::optional<std::vector<LabelChange>> labels;
      if (!labels_dir.empty()) {
        for (const char* ext : {".lab", ".txt"}) {
          auto p = fs::path(labels_dir) / (stem + ext);
          if (fs::exists(p)) {
            labels = parse_labels(read_file_bytes(p), p.string());
            break;
          }
        }
        if (!labels) warn("no label file for " + stem);
      }
      for (const auto& ex : slice_excerpts(mel, context, stride, stem)) {
        std::ostringstream name;
        name << stem << '_' << std::setw(6) << std::setfill('0') << ex.center_frame_index << ".mels";
        save_spectrogram(ex.spec, out_dir / name.str());
        if (labels) {
          double t = (static_cast<double>(ex.center_frame_index * cfg.hop_length) + cfg.frame_length / 2.0) /
                     cfg.sample_rate_hz;
          label_lines += name.str() + (vocal_at(*labels, t) ? " sing\n" : " nosing\n");
        }
      }
    } catch (const std::exception& e) {
      warn(stem + ": " + e.what());
      failures.push_back({stem, e.what()});
    }
  }
  if (!labels_dir.empty()) write_file_bytes(out_dir / "labels.txt", label_lines);
  write_manifest(out_dir, "extract",
                 {{"sample_rate_hz", cfg.sample_rate_hz}, {"frame_length", cfg.frame_length},
                  {"hop_length", cfg.hop_length}, {"n_bands", cfg.n_bands}, {"fmin_hz", cfg.fmin_hz},
                  {"fmax_hz", cfg.fmax_hz}, {"log_floor", cfg.log_floor}, {"context", context}, {"stride", stride},
                  {"standardized", stats.has_value()}},
                 0, wavs);
  return failures.empty() ? kOk : kPartialFailure;
}

inline int cmd_stats(const std::string& dataset_dir, const std::string& output, std::ostream& out) {
  auto files = list_dataset(dataset_dir);
  DatasetStatsAccumulator acc;
  for (const auto& f : files) acc.add(load_spectrogram(f));
  std::string text = to_json(acc.finish()).dump(2) + "\n";
  if (output.empty()) out << text;
  else write_file_bytes(output, text);
  return kOk;
}

// ---------------------------------------------------------------------------

/// Parses and runs one command line. args[0] is the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"occlex: occlusion-based explanations for spectrogram classifiers"};
  app.require_subcommand(1);

  ExplainFlags ef;
  std::string input, output;
  auto* explain_cmd = app.add_subcommand("explain", "explain one excerpt");
  explain_cmd->add_option("--input", input, "excerpt file (.mels or .csv)")->required();
  explain_cmd->add_option("--output", output, "output file or directory (default: stdout)");
  ef.add_to(*explain_cmd);

  ExplainFlags sf;
  std::string dataset, ns_list = "1000,5000,10000,20000,30000,40000,50000,60000,70000", out_dir;
  std::size_t repeats = 5;
  auto* ns_cmd = app.add_subcommand("ns-sweep", "U_n per excerpt across sample counts");
  ns_cmd->add_option("--dataset", dataset)->required();
  ns_cmd->add_option("--ns", ns_list, "comma-separated sample counts");
  ns_cmd->add_option("--repeats", repeats, "explanations per excerpt and condition (k)");
  ns_cmd->add_option("--output", out_dir)->required();
  sf.add_to(*ns_cmd);

  ExplainFlags cf;
  std::string contents = "zero,min_data,min_inp,mean_inp,gaussian_std", axes = "temporal,spectral";
  auto* cs_cmd = app.add_subcommand("content-stability", "U_n per excerpt across content types");
  cs_cmd->add_option("--dataset", dataset)->required();
  cs_cmd->add_option("--contents", contents, "comma-separated content types");
  cs_cmd->add_option("--axes", axes, "comma-separated axes");
  cs_cmd->add_option("--repeats", repeats);
  cs_cmd->add_option("--output", out_dir)->required();
  cf.add_to(*cs_cmd, false);

  ExplainFlags nf;
  std::string reference = "zero", sens_contents = "min_inp,mean_inp,gaussian_std";
  auto* sens_cmd = app.add_subcommand("content-sensitivity", "N_ce between a reference content and others");
  sens_cmd->add_option("--dataset", dataset)->required();
  sens_cmd->add_option("--reference", reference);
  sens_cmd->add_option("--contents", sens_contents);
  sens_cmd->add_option("--axes", axes);
  sens_cmd->add_option("--output", out_dir)->required();
  nf.add_to(*sens_cmd, false);

  std::string stems;
  std::size_t variants = kSynthVariantsPerPair, frames = 115;
  std::uint64_t synth_seed = 0;
  auto* gen_cmd = app.add_subcommand("synth-gen", "splice ground-truth annotated excerpts from stems");
  gen_cmd->add_option("--stems", stems, "directory of <song>.vocal.mels / <song>.instrumental.mels")->required();
  gen_cmd->add_option("--variants", variants);
  gen_cmd->add_option("--frames", frames);
  gen_cmd->add_option("--seed", synth_seed);
  gen_cmd->add_option("--output", out_dir)->required();

  ExplainFlags pf;
  pf.positive_only = true;
  std::string select_contents = "zero,min_inp,mean_inp,gaussian_std";
  double threshold = 0.5;
  auto* sel_cmd = app.add_subcommand("select-content", "rank content types by agreement with ground truth");
  sel_cmd->add_option("--dataset", dataset)->required();
  sel_cmd->add_option("--contents", select_contents);
  sel_cmd->add_option("--threshold", threshold);
  sel_cmd->add_option("--output", out_dir)->required();
  pf.add_to(*sel_cmd, false);

  std::string labels, stats_path;
  std::size_t context = kDefaultContext, stride = 1;
  FeatureConfig fc;
  auto* ext_cmd = app.add_subcommand("extract", "WAV to log-mel excerpts");
  ext_cmd->add_option("--input", input, "WAV file or directory")->required();
  ext_cmd->add_option("--labels", labels, "directory of <stem>.lab label files");
  ext_cmd->add_option("--stats", stats_path, "standardize with these band statistics");
  ext_cmd->add_option("--context", context);
  ext_cmd->add_option("--stride", stride);
  ext_cmd->add_option("--sample-rate", fc.sample_rate_hz);
  ext_cmd->add_option("--frame-length", fc.frame_length);
  ext_cmd->add_option("--hop", fc.hop_length);
  ext_cmd->add_option("--bands", fc.n_bands);
  ext_cmd->add_option("--fmin", fc.fmin_hz);
  ext_cmd->add_option("--fmax", fc.fmax_hz);
  ext_cmd->add_option("--log-floor", fc.log_floor);
  ext_cmd->add_option("--output", out_dir)->required();

  auto* stats_cmd = app.add_subcommand("stats", "dataset statistics (min bin, per-band mean/std)");
  stats_cmd->add_option("--dataset", dataset)->required();
  stats_cmd->add_option("--output", output, "JSON file (default: stdout)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*explain_cmd) return cmd_explain(input, output, ef, out);
    if (*ns_cmd) return cmd_ns_sweep(dataset, ns_list, repeats, sf, out_dir);
    if (*cs_cmd) return cmd_content_stability(dataset, contents, axes, repeats, cf, out_dir);
    if (*sens_cmd) return cmd_content_sensitivity(dataset, reference, sens_contents, axes, nf, out_dir);
    if (*gen_cmd) return cmd_synth_gen(stems, variants, frames, synth_seed, out_dir);
    if (*sel_cmd) return cmd_select_content(dataset, select_contents, threshold, pf, out_dir);
    if (*ext_cmd) return cmd_extract(input, labels, stats_path, context, stride, fc, out_dir);
    if (*stats_cmd) return cmd_stats(dataset, output, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kPartialFailure;
  }
  return kUsage;
}

}  // namespace occlex::harness
