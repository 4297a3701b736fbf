#pragma once

// Experiment configuration (sectioned key = value text) and the end-to-end
// pipeline: features, the three detector heads, attributions and reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "igsed/attrib.hpp"
#include "igsed/common.hpp"
#include "igsed/dataset.hpp"
#include "igsed/dsp.hpp"
#include "igsed/eval.hpp"
#include "igsed/model.hpp"
#include "igsed/train.hpp"

namespace igsed::experiment {

enum class Head { clip, fw_ws, fw_ss };

inline const char* to_string(Head h) {
  switch (h) {
    case Head::clip: return "clip";
    case Head::fw_ws: return "fw-ws";
    case Head::fw_ss: return "fw-ss";
  }
  return "?";
}

inline Head head_from_string(const std::string& s) {
  if (s == "clip") return Head::clip;
  if (s == "fw-ws") return Head::fw_ws;
  if (s == "fw-ss") return Head::fw_ss;
  throw InvalidInput("unknown head '" + s + "' (expected clip, fw-ws or fw-ss)");
}

inline constexpr Head kHeads[] = {Head::clip, Head::fw_ws, Head::fw_ss};

// Report names of the five compared methods.
inline const std::string kIG = "IG";
inline const std::string kFWWS = "FW-WS";
inline const std::string kFWSS = "FW-SS";
inline const std::string kRandom = "random";
inline const std::string kEnergy = "energy";
inline const std::vector<std::string> kReportMethods{kIG, kFWWS, kFWSS, kRandom, kEnergy};

inline std::string report_name(attrib::Method m) {
  switch (m) {
    case attrib::Method::ig: return kIG;
    case attrib::Method::random: return kRandom;
    case attrib::Method::energy: return kEnergy;
  }
  return "?";
}

enum class TauSelection { fixed, validation_optimal };

struct AttributionSettings {
  int steps = 50;
  std::vector<attrib::Method> methods{attrib::Method::ig, attrib::Method::random,
                                      attrib::Method::energy};
  double gate = 0.5;
};

struct EvaluationSettings {
  TauSelection selection = TauSelection::validation_optimal;
  int fixed_tau = 80;
  double frames_per_second = 10.0;
};

struct ExperimentConfig {
  data::DatasetConfig dataset;
  dsp::MelFrontendConfig frontend;
  std::vector<model::ConvBlockSpec> blocks = model::ModelConfig{}.blocks;
  model::TrainConfig train;
  AttributionSettings attribution;
  EvaluationSettings evaluation;
  std::string out = "run";
  std::uint64_t seed = 1;

  static ExperimentConfig full_scale() {
    ExperimentConfig c;
    c.dataset = data::DatasetConfig::full_scale();
    c.frontend = dsp::MelFrontendConfig::full_scale();
    c.blocks = model::ModelConfig::full_scale().blocks;
    return c;
  }

  /// Model config for one head; input size and frame rate follow the frontend.
  model::ModelConfig model_config(Head h) const {
    model::ModelConfig m;
    m.n_mels = frontend.n_mels;
    m.blocks = blocks;
    m.embed_dim = blocks.empty() ? 0 : blocks.back().channels;
    m.head = h == Head::clip ? model::HeadKind::clip : model::HeadKind::framewise;
    m.spectral_hop_s = static_cast<double>(frontend.hop) / dataset.sample_rate;
    return m;
  }

  model::TrainConfig train_config(Head h) const {
    auto t = train;
    t.supervision = h == Head::fw_ss ? model::Supervision::strong : model::Supervision::weak;
    t.seed = derive_seed(seed, 0x7472616eULL, static_cast<std::uint64_t>(h) + 1);
    return t;
  }

  data::DatasetConfig dataset_config() const {
    auto d = dataset;
    d.seed = seed;
    return d;
  }

  void validate() const {
    dataset.validate();
    frontend.validate(dataset.sample_rate);
    for (auto h : kHeads) model_config(h).validate();
    train.validate();
    if (attribution.steps < 1) throw InvalidSpec("attribution: steps must be >= 1");
    if (attribution.methods.empty()) throw InvalidSpec("attribution: no methods configured");
    if (evaluation.fixed_tau < eval::kTauMin || evaluation.fixed_tau > eval::kTauMax)
      throw InvalidSpec("evaluation: tau must be in 1..99");
  }
};

// ---------------------------------------------------------------------------
// Config text

namespace detail {

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + f(v[i]);
  return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::vector<std::size_t> size_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      auto v = std::stoull(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw InvalidSpec("config: '" + key + "' expects a comma-separated list of integers");
    }
  }
  return out;
}

template <class T>
T get(const boost::property_tree::ptree& pt, const std::string& key, T fallback) {
  try {
    return pt.get<T>(key, fallback);
  } catch (const boost::property_tree::ptree_error& e) {
    throw InvalidSpec("config: bad value for '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& d = c.dataset;
  os << "[run]\n"
     << "seed = " << c.seed << "\n"
     << "out = " << c.out << "\n\n"
     << "[dataset]\n"
     << "n_train = " << d.n_train << "\n"
     << "n_val = " << d.n_val << "\n"
     << "n_test = " << d.n_test << "\n"
     << "clip_duration = " << d.clip_duration << "\n"
     << "sample_rate = " << d.sample_rate << "\n"
     << "snr_low_db = " << d.snr_low_db << "\n"
     << "snr_high_db = " << d.snr_high_db << "\n"
     << "background_db = " << d.background_db << "\n"
     << "min_events = " << d.min_events << "\n"
     << "max_events = " << d.max_events << "\n"
     << "max_polyphony = " << d.max_polyphony << "\n"
     << "variants_per_class = " << d.variants_per_class << "\n"
     << "max_event_duration = " << d.max_event_duration << "\n\n";
  const auto& f = c.frontend;
  os << "[frontend]\n"
     << "window_len = " << f.window_len << "\n"
     << "hop = " << f.hop << "\n"
     << "n_mels = " << f.n_mels << "\n"
     << "fmin = " << f.fmin << "\n"
     << "fmax = " << f.fmax << "\n"
     << "log_floor = " << f.log_floor << "\n\n";
  using B = model::ConvBlockSpec;
  auto field = [&](std::size_t B::*m) {
    return detail::join<B>(c.blocks, [m](const B& b) { return std::to_string(b.*m); });
  };
  os << "[model]\n"
     << "channels = " << field(&B::channels) << "\n"
     << "kernel = " << field(&B::kernel) << "\n"
     << "pool_time = " << field(&B::pool_time) << "\n"
     << "pool_freq = " << field(&B::pool_freq) << "\n\n";
  os << "[train]\n"
     << "epochs = " << c.train.epochs << "\n"
     << "patience = " << c.train.patience << "\n"
     << "lr = " << c.train.lr << "\n"
     << "batch_size = " << c.train.batch_size << "\n\n";
  os << "[attribution]\n"
     << "steps = " << c.attribution.steps << "\n"
     << "methods = "
     << detail::join<attrib::Method>(c.attribution.methods,
                                     [](const attrib::Method& m) { return std::string(attrib::to_string(m)); })
     << "\n"
     << "gate = " << c.attribution.gate << "\n\n";
  os << "[evaluation]\n"
     << "tau_selection = "
     << (c.evaluation.selection == TauSelection::fixed ? "fixed" : "validation_optimal") << "\n"
     << "fixed_tau = " << c.evaluation.fixed_tau << "\n"
     << "frames_per_second = " << c.evaluation.frames_per_second << "\n";
  return os.str();
}

/// Missing keys keep their desk defaults; unknown sections or keys are errors.
inline ExperimentConfig from_ini(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InvalidSpec(std::string("config: ") + e.what());
  }
  static const std::map<std::string, std::vector<std::string>> known{
      {"run", {"seed", "out", "scale"}},
      {"dataset",
       {"n_train", "n_val", "n_test", "clip_duration", "sample_rate", "snr_low_db", "snr_high_db",
        "background_db", "min_events", "max_events", "max_polyphony", "variants_per_class",
        "max_event_duration"}},
      {"frontend", {"window_len", "hop", "n_mels", "fmin", "fmax", "log_floor"}},
      {"model", {"channels", "kernel", "pool_time", "pool_freq"}},
      {"train", {"epochs", "patience", "lr", "batch_size"}},
      {"attribution", {"steps", "methods", "gate"}},
      {"evaluation", {"tau_selection", "fixed_tau", "frames_per_second"}}};
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw InvalidSpec("config: unknown section [" + section + "]");
    for (const auto& [key, _] : body)
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw InvalidSpec("config: unknown key '" + key + "' in [" + section + "]");
  }

  // Explicit keys override the chosen preset.
  auto scale = tree.get<std::string>("run.scale", "desk");
  if (scale != "desk" && scale != "full_scale")
    throw InvalidSpec("config: run.scale must be desk or full_scale, got '" + scale + "'");
  ExperimentConfig c = scale == "full_scale" ? ExperimentConfig::full_scale() : ExperimentConfig{};
  using detail::get;
  c.seed = get<std::uint64_t>(tree, "run.seed", c.seed);
  c.out = get<std::string>(tree, "run.out", c.out);

  auto& d = c.dataset;
  d.n_train = get(tree, "dataset.n_train", d.n_train);
  d.n_val = get(tree, "dataset.n_val", d.n_val);
  d.n_test = get(tree, "dataset.n_test", d.n_test);
  d.clip_duration = get(tree, "dataset.clip_duration", d.clip_duration);
  d.sample_rate = get(tree, "dataset.sample_rate", d.sample_rate);
  d.snr_low_db = get(tree, "dataset.snr_low_db", d.snr_low_db);
  d.snr_high_db = get(tree, "dataset.snr_high_db", d.snr_high_db);
  d.background_db = get(tree, "dataset.background_db", d.background_db);
  d.min_events = get(tree, "dataset.min_events", d.min_events);
  d.max_events = get(tree, "dataset.max_events", d.max_events);
  d.max_polyphony = get(tree, "dataset.max_polyphony", d.max_polyphony);
  d.variants_per_class = get(tree, "dataset.variants_per_class", d.variants_per_class);
  d.max_event_duration = get(tree, "dataset.max_event_duration", d.max_event_duration);

  auto& f = c.frontend;
  f.window_len = get(tree, "frontend.window_len", f.window_len);
  f.hop = get(tree, "frontend.hop", f.hop);
  f.n_mels = get(tree, "frontend.n_mels", f.n_mels);
  f.fmin = get(tree, "frontend.fmin", f.fmin);
  f.fmax = get(tree, "frontend.fmax", f.fmax);
  f.log_floor = get(tree, "frontend.log_floor", f.log_floor);

  if (auto m = tree.get_child_optional("model")) {
    auto lists = std::map<std::string, std::vector<std::size_t>>{};
    for (const char* key : {"channels", "kernel", "pool_time", "pool_freq"})
      if (auto v = m->get_optional<std::string>(key)) lists[key] = detail::size_list(key, *v);
    std::size_t n = lists.count("channels") ? lists["channels"].size() : c.blocks.size();
    std::vector<model::ConvBlockSpec> blocks(n);
    for (std::size_t i = 0; i < n; ++i) blocks[i] = i < c.blocks.size() ? c.blocks[i] : c.blocks.back();
    auto apply = [&](const char* key, std::size_t model::ConvBlockSpec::*field) {
      if (!lists.count(key)) return;
      const auto& v = lists[key];
      if (v.size() == 1) {
        for (auto& b : blocks) b.*field = v[0];
      } else if (v.size() == n) {
        for (std::size_t i = 0; i < n; ++i) blocks[i].*field = v[i];
      } else {
        throw InvalidSpec(std::string("config: [model] ") + key + " needs 1 or " + std::to_string(n) +
                          " entries");
      }
    };
    apply("channels", &model::ConvBlockSpec::channels);
    apply("kernel", &model::ConvBlockSpec::kernel);
    apply("pool_time", &model::ConvBlockSpec::pool_time);
    apply("pool_freq", &model::ConvBlockSpec::pool_freq);
    c.blocks = blocks;
  }

  c.train.epochs = get(tree, "train.epochs", c.train.epochs);
  c.train.patience = get(tree, "train.patience", c.train.patience);
  c.train.lr = get(tree, "train.lr", c.train.lr);
  c.train.batch_size = get(tree, "train.batch_size", c.train.batch_size);

  c.attribution.steps = get(tree, "attribution.steps", c.attribution.steps);
  c.attribution.gate = get(tree, "attribution.gate", c.attribution.gate);
  if (auto m = tree.get_optional<std::string>("attribution.methods")) {
    c.attribution.methods.clear();
    for (const auto& s : detail::split_list(*m)) c.attribution.methods.push_back(attrib::method_from_string(s));
  }

  auto sel = get<std::string>(tree, "evaluation.tau_selection", "validation_optimal");
  if (sel == "fixed")
    c.evaluation.selection = TauSelection::fixed;
  else if (sel == "validation_optimal")
    c.evaluation.selection = TauSelection::validation_optimal;
  else
    throw InvalidSpec("config: tau_selection must be fixed or validation_optimal");
  c.evaluation.fixed_tau = get(tree, "evaluation.fixed_tau", c.evaluation.fixed_tau);
  c.evaluation.frames_per_second = get(tree, "evaluation.frames_per_second", c.evaluation.frames_per_second);

  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_ini(ss.str());
}

// ---------------------------------------------------------------------------
// Pipeline stages

/// Log-mel features and labels for every clip, grouped by split.
struct Features {
  std::vector<model::Example> train, val, test;
  std::vector<const data::ClipRecord*> train_clips, val_clips, test_clips;

  const std::vector<model::Example>& examples(data::Split s) const {
    return s == data::Split::train ? train : s == data::Split::val ? val : test;
  }
  const std::vector<const data::ClipRecord*>& clips(data::Split s) const {
    return s == data::Split::train ? train_clips : s == data::Split::val ? val_clips : test_clips;
  }
};

inline Features prepare_features(const data::Dataset& ds, const dsp::LogMelFrontend& fe,
                                 const model::ModelConfig& mc) {
  Features f;
  for (const auto& c : ds.clips) {
    model::Example ex;
    ex.logmel = fe.compute(c.audio.samples).values;
    ex.clip_labels = model::clip_labels(c.events, mc.n_classes);
    ex.frame_labels = model::rasterize(c.events, mc.n_classes, mc.output_frames(ex.logmel.rows),
                                       mc.frame_duration(), ds.config.clip_duration);
    switch (c.split) {
      case data::Split::train: f.train.push_back(std::move(ex)); f.train_clips.push_back(&c); break;
      case data::Split::val: f.val.push_back(std::move(ex)); f.val_clips.push_back(&c); break;
      case data::Split::test: f.test.push_back(std::move(ex)); f.test_clips.push_back(&c); break;
    }
  }
  return f;
}

inline model::TrainResult train_head(const ExperimentConfig& cfg, const Features& f, Head h) {
  return model::train(f.train, f.val, cfg.model_config(h), cfg.train_config(h));
}

inline std::vector<std::vector<double>> clip_probabilities(const model::Classifier& m,
                                                           const std::vector<model::Example>& xs) {
  std::vector<std::vector<double>> p;
  p.reserve(xs.size());
  for (const auto& x : xs) p.push_back(model::predict_clip(m, x.logmel));
  return p;
}

inline std::vector<int> detected_classes(const std::vector<double>& probs, double gate) {
  std::vector<int> out;
  for (std::size_t c = 0; c < probs.size(); ++c)
    if (probs[c] > gate) out.push_back(static_cast<int>(c));
  return out;
}

inline std::vector<int> gt_classes(const std::vector<scene::EventAnnotation>& events) {
  std::vector<int> out;
  for (const auto& e : events)
    if (std::find(out.begin(), out.end(), e.class_id) == out.end()) out.push_back(e.class_id);
  std::sort(out.begin(), out.end());
  return out;
}

/// Classes that receive a dump: detected classes for IG, ground-truth classes
/// for the class-independent baselines.
inline std::vector<int> attribution_targets(attrib::Method m, const data::ClipRecord& clip,
                                            const std::vector<double>& probs, double gate) {
  return m == attrib::Method::ig ? detected_classes(probs, gate) : gt_classes(clip.events);
}

inline std::uint64_t random_map_seed(std::uint64_t run_seed, const std::string& clip_id, int class_id) {
  return derive_seed(run_seed, 0x72616e64ULL, fnv1a(clip_id.data(), clip_id.size()),
                     static_cast<std::uint64_t>(class_id));
}

/// `clip_model` is only read by IG and may be null for the baselines.
inline attrib::AttributionMap compute_attribution(const ExperimentConfig& cfg, attrib::Method m,
                                                  const model::Classifier* clip_model,
                                                  const dsp::LogMelFrontend& fe,
                                                  const data::ClipRecord& clip, int class_id) {
  attrib::AttributionMap map;
  switch (m) {
    case attrib::Method::ig:
      if (!clip_model) throw ContractError("integrated gradients needs the clip model");
      return attrib::integrated_gradients(*clip_model, fe, clip.audio, class_id, cfg.attribution.steps,
                                          cfg.attribution.gate);
    case attrib::Method::random:
      map = attrib::random_attribution(clip.audio, random_map_seed(cfg.seed, clip.clip_id, class_id));
      break;
    case attrib::Method::energy:
      map = attrib::energy_attribution(clip.audio);
      break;
  }
  map.request.class_id = class_id;
  return map;
}

/// Looks up the attribution scores of (method, clip, class); nullptr if absent.
using MapLookup = std::function<const std::vector<double>*(attrib::Method, const std::string&, int)>;

struct TrainedHeads {
  model::Classifier clip, fw_ws, fw_ss;
};

/// Evaluated pairs of one split: (clip, class) with the class in the ground
/// truth and detected by the clip model. Every method is filled in.
inline std::vector<eval::EvalPair> build_eval_pairs(const ExperimentConfig& cfg, const Features& f,
                                                    data::Split split, const TrainedHeads& heads,
                                                    const MapLookup& lookup) {
  const auto& clips = f.clips(split);
  const auto& xs = f.examples(split);
  auto grid = eval::FrameGrid::for_duration(cfg.dataset.clip_duration, cfg.evaluation.frames_per_second);
  std::vector<eval::EvalPair> pairs;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& clip = *clips[i];
    auto probs = model::predict_clip(heads.clip, xs[i].logmel);
    auto ws = model::framewise_forward(heads.fw_ws, xs[i].logmel);
    auto ss = model::framewise_forward(heads.fw_ss, xs[i].logmel);
    for (int c : gt_classes(clip.events)) {
      if (!(probs[static_cast<std::size_t>(c)] > cfg.attribution.gate)) continue;
      eval::EvalPair p;
      p.clip_id = clip.clip_id;
      p.class_id = c;
      p.gt = eval::gt_mask(clip.events, c, grid);
      p.frame_values[kFWWS] = eval::framewise_frame_values(ws, c, grid);
      p.frame_values[kFWSS] = eval::framewise_frame_values(ss, c, grid);
      for (auto m : cfg.attribution.methods) {
        const auto* scores = lookup(m, clip.clip_id, c);
        if (!scores)
          throw IoError("missing " + std::string(attrib::to_string(m)) + " attribution for clip " +
                        clip.clip_id + ", class " + std::to_string(c));
        p.frame_values[report_name(m)] = eval::attr_to_frames(*scores, clip.audio.sample_rate, grid);
      }
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

inline std::vector<std::string> evaluated_methods(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& name : kReportMethods) {
    if (name == kFWWS || name == kFWSS) {
      out.push_back(name);
      continue;
    }
    for (auto m : cfg.attribution.methods)
      if (report_name(m) == name) out.push_back(name);
  }
  return out;
}

inline std::vector<eval::SweepCurve> sweep_all(const std::vector<eval::EvalPair>& pairs,
                                               const std::vector<std::string>& methods) {
  std::vector<eval::SweepCurve> curves;
  for (const auto& m : methods) curves.push_back(eval::threshold_sweep(pairs, m));
  return curves;
}

/// Threshold per method: the validation IoU argmax, or the fixed value.
inline std::vector<std::pair<std::string, int>> select_taus(const ExperimentConfig& cfg,
                                                            const std::vector<eval::SweepCurve>& val_curves) {
  std::vector<std::pair<std::string, int>> taus;
  for (const auto& c : val_curves)
    taus.emplace_back(c.method, cfg.evaluation.selection == TauSelection::fixed ? cfg.evaluation.fixed_tau
                                                                                : c.best_tau_iou);
  return taus;
}

inline eval::DetectionReport full_report(const std::vector<eval::EvalPair>& test_pairs,
                                         const std::vector<std::pair<std::string, int>>& taus,
                                         const model::Classifier& clip_model, const Features& f) {
  auto rep = eval::evaluate(test_pairs, taus);
  std::vector<std::vector<double>> labels;
  for (const auto& x : f.test) labels.push_back(x.clip_labels);
  rep.classification = eval::classification_table(clip_probabilities(clip_model, f.test), labels);
  rep.classification_macro_f1 = eval::macro_f1(rep.classification);
  return rep;
}

/// Everything an in-memory run produces.
struct PipelineResult {
  data::Dataset dataset;
  Features features;
  std::map<Head, model::TrainResult> trained;
  std::vector<eval::EvalPair> val_pairs, test_pairs;
  std::vector<eval::SweepCurve> val_curves, test_curves;
  std::vector<std::pair<std::string, int>> taus;
  eval::DetectionReport report;

  PipelineResult() = default;
  PipelineResult(const PipelineResult&) = delete;
  PipelineResult& operator=(const PipelineResult&) = delete;
};

using Progress = std::function<void(const std::string&)>;

/// Runs synth -> train x3 -> attribute -> sweep -> evaluate in memory.
inline void run_pipeline(const ExperimentConfig& cfg, PipelineResult& out, const Progress& progress = {}) {
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  cfg.validate();
  out.dataset = data::build_dataset(cfg.dataset_config());
  dsp::LogMelFrontend fe(cfg.frontend, cfg.dataset.sample_rate);
  out.features = prepare_features(out.dataset, fe, cfg.model_config(Head::clip));
  say("dataset: " + std::to_string(out.dataset.clips.size()) + " clips");
  for (auto h : kHeads) {
    out.trained.emplace(h, train_head(cfg, out.features, h));
    const auto& r = out.trained.at(h);
    say(std::string("trained ") + to_string(h) + ": " + std::to_string(r.log.size()) +
        " epochs, best val loss " + std::to_string(r.best_val_loss));
  }
  TrainedHeads heads{out.trained.at(Head::clip).model, out.trained.at(Head::fw_ws).model,
                     out.trained.at(Head::fw_ss).model};

  std::map<std::tuple<attrib::Method, std::string, int>, std::vector<double>> maps;
  for (auto split : {data::Split::val, data::Split::test}) {
    const auto& clips = out.features.clips(split);
    auto probs = clip_probabilities(heads.clip, out.features.examples(split));
    for (std::size_t i = 0; i < clips.size(); ++i) {
      auto gt = gt_classes(clips[i]->events);
      for (auto m : cfg.attribution.methods)
        for (int c : attribution_targets(m, *clips[i], probs[i], cfg.attribution.gate)) {
          // Only evaluated pairs are needed in memory.
          if (std::find(gt.begin(), gt.end(), c) == gt.end() ||
              !(probs[i][static_cast<std::size_t>(c)] > cfg.attribution.gate))
            continue;
          maps[{m, clips[i]->clip_id, c}] =
              compute_attribution(cfg, m, &heads.clip, fe, *clips[i], c).scores;
        }
    }
  }
  say("attributions: " + std::to_string(maps.size()) + " maps");
  MapLookup lookup = [&](attrib::Method m, const std::string& id, int c) -> const std::vector<double>* {
    auto it = maps.find({m, id, c});
    return it == maps.end() ? nullptr : &it->second;
  };
  out.val_pairs = build_eval_pairs(cfg, out.features, data::Split::val, heads, lookup);
  out.test_pairs = build_eval_pairs(cfg, out.features, data::Split::test, heads, lookup);
  auto methods = evaluated_methods(cfg);
  out.val_curves = sweep_all(out.val_pairs, methods);
  out.test_curves = sweep_all(out.test_pairs, methods);
  out.taus = select_taus(cfg, out.val_curves);
  out.report = full_report(out.test_pairs, out.taus, heads.clip, out.features);
}

}  // namespace igsed::experiment
