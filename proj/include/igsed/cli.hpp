#pragma once

// Staged runner over a run directory:
//
//   <run>/config.ini                     effective config, frozen by synth
//   <run>/dataset/                       clips, annotations, manifest
//   <run>/models/<head>.{bin,json}       checkpoints, plus train_<head>.csv
//   <run>/attributions/<method>/<split>/<clip>_c<k>.{bin,json}
//   <run>/sweep/                         validation/test sweeps and chosen taus
//   <run>/reports[_tau<T>]/              summary, per-class, classification
//
// Every stage writes only paths that do not exist yet.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "igsed/experiment.hpp"

namespace igsed::cli {

namespace fs = std::filesystem;
using experiment::ExperimentConfig;
using experiment::Head;

/// Usage problems that are not config errors (exit code 1).
struct UsageError : Error {
  using Error::Error;
};

struct Options {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> head;
  std::optional<std::string> method;
  std::optional<int> steps;
  std::optional<int> tau;
  std::optional<fs::path> out;
};

struct RunDir {
  fs::path root;

  fs::path config() const { return root / "config.ini"; }
  fs::path dataset() const { return root / "dataset"; }
  fs::path models() const { return root / "models"; }
  fs::path model(Head h) const { return models() / experiment::to_string(h); }
  fs::path train_log(Head h) const { return models() / ("train_" + std::string(experiment::to_string(h)) + ".csv"); }
  fs::path attributions(attrib::Method m) const { return root / "attributions" / attrib::to_string(m); }
  fs::path dump(attrib::Method m, data::Split s, const std::string& clip, int c) const {
    return attributions(m) / data::to_string(s) / (clip + "_c" + std::to_string(c));
  }
  fs::path sweep() const { return root / "sweep"; }
  fs::path reports(std::optional<int> tau) const {
    return root / (tau ? "reports_tau" + std::to_string(*tau) : std::string("reports"));
  }
};

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void claim(const fs::path& p) {
  if (fs::exists(p))
    throw UsageError(p.string() + " already exists; refusing to overwrite a previous run's output");
}

inline void require(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw IoError("missing " + p.string() + " (" + hint + ")");
}

/// Run directory for a command: --out, else the config's `out`.
inline RunDir run_dir(const Options& o) {
  if (o.out) return {*o.out};
  if (o.config) return {experiment::load_config(*o.config).out};
  throw UsageError("need --out <run dir> or --config <file>");
}

/// Config of an existing run. A --config/--seed given alongside must agree
/// with what the run was created with.
inline ExperimentConfig stored_config(const Options& o, const RunDir& run) {
  require(run.config(), "create the run with `igsed synth`");
  auto cfg = experiment::from_ini(read_text(run.config()));
  if (o.config) {
    auto given = experiment::load_config(*o.config);
    given.out = cfg.out;
    if (o.seed) given.seed = *o.seed;
    if (experiment::to_ini(given) != experiment::to_ini(cfg))
      throw UsageError("config " + o.config->string() + " differs from " + run.config().string());
  } else if (o.seed && *o.seed != cfg.seed) {
    throw UsageError("--seed " + std::to_string(*o.seed) + " differs from the run's seed " +
                     std::to_string(cfg.seed));
  }
  return cfg;
}

struct Loaded {
  ExperimentConfig cfg;
  data::Dataset dataset;
  experiment::Features features;
  dsp::LogMelFrontend frontend;

  explicit Loaded(ExperimentConfig c, const RunDir& run)
      : cfg(std::move(c)), frontend(cfg.frontend, cfg.dataset.sample_rate) {
    dataset = data::load_dataset(run.dataset());
    if (dataset.config.to_json() != cfg.dataset_config().to_json())
      throw IoError("dataset in " + run.dataset().string() + " was not built from " + run.config().string());
    features = experiment::prepare_features(dataset, frontend, cfg.model_config(Head::clip));
  }
  Loaded(const Loaded&) = delete;
};

inline model::Classifier load_model(const RunDir& run, Head h) {
  require(grad::checkpoint_index(run.model(h)),
          std::string("train it with `igsed train --head ") + experiment::to_string(h) + "`");
  return model::Classifier::from_checkpoint(grad::load_checkpoint(run.model(h)));
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_synth(const Options& o, std::ostream& log) {
  if (!o.config) throw UsageError("synth needs --config <file>");
  auto cfg = experiment::load_config(*o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out = o.out->string();
  RunDir run{cfg.out};
  claim(run.config());
  claim(run.dataset());
  auto ds = data::build_dataset(cfg.dataset_config());
  fs::create_directories(run.root);
  data::write_text(run.config(), experiment::to_ini(cfg));
  data::save_dataset(ds, run.dataset());
  log << "synth: " << ds.clips.size() << " clips -> " << run.dataset().string() << '\n';
}

inline void cmd_train(const Options& o, std::ostream& log) {
  if (!o.head) throw UsageError("train needs --head clip|fw-ws|fw-ss");
  Head h;
  try {
    h = experiment::head_from_string(*o.head);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  auto run = run_dir(o);
  auto cfg = stored_config(o, run);
  claim(grad::checkpoint_bin(run.model(h)));
  claim(run.train_log(h));
  Loaded L(cfg, run);
  auto r = experiment::train_head(L.cfg, L.features, h);
  fs::create_directories(run.models());
  auto ckpt = r.model.to_checkpoint();
  ckpt.metadata["best_epoch"] = r.best_epoch;
  ckpt.metadata["best_val_loss"] = r.best_val_loss;
  grad::save_checkpoint(run.model(h), ckpt);
  data::write_text(run.train_log(h), model::training_log_csv(r.log));
  log << "train " << experiment::to_string(h) << ": " << r.log.size() << " epochs, best epoch "
      << r.best_epoch << ", val loss " << r.best_val_loss << '\n';
}

inline void cmd_attribute(const Options& o, std::ostream& log) {
  if (!o.method) throw UsageError("attribute needs --method ig|random|energy");
  attrib::Method m;
  try {
    m = attrib::method_from_string(*o.method);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (o.steps && *o.steps < 1) throw UsageError("--steps must be >= 1");
  auto run = run_dir(o);
  auto cfg = stored_config(o, run);
  if (o.steps) cfg.attribution.steps = *o.steps;
  claim(run.attributions(m));
  Loaded L(cfg, run);
  std::optional<model::Classifier> clip_model;
  if (m == attrib::Method::ig) clip_model.emplace(load_model(run, Head::clip));

  fs::create_directories(run.attributions(m));
  std::ofstream skipped(run.attributions(m) / "skipped.log");
  std::size_t dumps = 0, skips = 0;
  for (auto split : {data::Split::val, data::Split::test}) {
    fs::create_directories(run.attributions(m) / data::to_string(split));
    const auto& clips = L.features.clips(split);
    const auto& xs = L.features.examples(split);
    for (std::size_t i = 0; i < clips.size(); ++i) {
      std::vector<double> probs;
      if (clip_model) probs = model::predict_clip(*clip_model, xs[i].logmel);
      auto targets = experiment::attribution_targets(m, *clips[i], probs, cfg.attribution.gate);
      if (targets.empty()) {
        skipped << data::to_string(split) << '/' << clips[i]->clip_id << ": no class above gate "
                << cfg.attribution.gate << '\n';
        ++skips;
        continue;
      }
      for (int c : targets) {
        auto map = experiment::compute_attribution(cfg, m, clip_model ? &*clip_model : nullptr, L.frontend,
                                                   *clips[i], c);
        attrib::save_attribution(run.dump(m, split, clips[i]->clip_id, c), map);
        ++dumps;
      }
    }
  }
  nlohmann::json req{{"method", attrib::to_string(m)},
                     {"steps", m == attrib::Method::ig ? cfg.attribution.steps : 0},
                     {"gate", cfg.attribution.gate},
                     {"dumps", dumps},
                     {"skipped_clips", skips}};
  data::write_text(run.attributions(m) / "request.json", req.dump(2) + "\n");
  log << "attribute " << attrib::to_string(m) << ": " << dumps << " maps, " << skips << " clips skipped\n";
}

/// Attribution scores read from a run's dumps, memoized.
class DumpReader {
 public:
  DumpReader(const RunDir& run, data::Split split) : run_(run), split_(split) {}

  const std::vector<double>* operator()(attrib::Method m, const std::string& clip, int c) {
    auto key = std::make_tuple(m, clip, c);
    auto it = cache_.find(key);
    if (it != cache_.end()) return &it->second;
    auto stem = run_.dump(m, split_, clip, c);
    if (!fs::exists(stem.string() + ".json"))
      throw IoError("missing attribution " + stem.string() + ".json (run `igsed attribute --method " +
                    attrib::to_string(m) + "`)");
    return &cache_.emplace(key, attrib::load_attribution(stem).scores).first->second;
  }

 private:
  RunDir run_;
  data::Split split_;
  std::map<std::tuple<attrib::Method, std::string, int>, std::vector<double>> cache_;
};

inline experiment::TrainedHeads load_heads(const RunDir& run) {
  return {load_model(run, Head::clip), load_model(run, Head::fw_ws), load_model(run, Head::fw_ss)};
}

inline std::vector<eval::EvalPair> split_pairs(const Loaded& L, const RunDir& run, data::Split split,
                                               const experiment::TrainedHeads& heads) {
  DumpReader reader(run, split);
  experiment::MapLookup lookup = [&](attrib::Method m, const std::string& id, int c) { return reader(m, id, c); };
  return experiment::build_eval_pairs(L.cfg, L.features, split, heads, lookup);
}

inline std::string taus_csv(const std::vector<std::pair<std::string, int>>& taus) {
  std::string s = "method,tau\n";
  for (const auto& [m, t] : taus) s += m + "," + std::to_string(t) + "\n";
  return s;
}

inline std::vector<std::pair<std::string, int>> read_taus(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  std::getline(in, line);
  if (line != "method,tau") throw IoError("malformed tau file " + p.string());
  std::vector<std::pair<std::string, int>> out;
  while (std::getline(in, line)) {
    auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError("malformed line in " + p.string() + ": " + line);
    out.emplace_back(line.substr(0, comma), std::stoi(line.substr(comma + 1)));
  }
  return out;
}

inline void cmd_sweep(const Options& o, std::ostream& log) {
  auto run = run_dir(o);
  auto cfg = stored_config(o, run);
  claim(run.sweep());
  Loaded L(cfg, run);
  auto heads = load_heads(run);
  auto methods = experiment::evaluated_methods(L.cfg);
  auto val = experiment::sweep_all(split_pairs(L, run, data::Split::val, heads), methods);
  auto test = experiment::sweep_all(split_pairs(L, run, data::Split::test, heads), methods);
  auto chosen = L.cfg;
  chosen.evaluation.selection = experiment::TauSelection::validation_optimal;
  auto taus = experiment::select_taus(chosen, val);
  fs::create_directories(run.sweep());
  data::write_text(run.sweep() / "sweep_val.csv", eval::sweep_csv(val));
  data::write_text(run.sweep() / "sweep_test.csv", eval::sweep_csv(test));
  data::write_text(run.sweep() / "taus.csv", taus_csv(taus));
  for (const auto& c : val)
    log << "sweep " << c.method << ": best tau " << c.best_tau_iou << " (val IoU " << c.iou_at(c.best_tau_iou)
        << ")\n";
}

inline void cmd_evaluate(const Options& o, std::ostream& log) {
  if (o.tau && (*o.tau < eval::kTauMin || *o.tau > eval::kTauMax)) throw UsageError("--tau must be in 1..99");
  auto run = run_dir(o);
  auto cfg = stored_config(o, run);
  auto dir = run.reports(o.tau);
  claim(dir);
  Loaded L(cfg, run);
  auto methods = experiment::evaluated_methods(L.cfg);
  std::vector<std::pair<std::string, int>> taus;
  if (o.tau) {
    for (const auto& m : methods) taus.emplace_back(m, *o.tau);
  } else if (L.cfg.evaluation.selection == experiment::TauSelection::fixed) {
    for (const auto& m : methods) taus.emplace_back(m, L.cfg.evaluation.fixed_tau);
  } else {
    require(run.sweep() / "taus.csv", "validation-optimal thresholds need `igsed sweep` first");
    taus = read_taus(run.sweep() / "taus.csv");
  }
  auto heads = load_heads(run);
  auto pairs = split_pairs(L, run, data::Split::test, heads);
  auto rep = experiment::full_report(pairs, taus, heads.clip, L.features);
  fs::create_directories(dir);
  data::write_text(dir / "summary.csv", eval::summary_csv(rep));
  data::write_text(dir / "per_class.csv", eval::per_class_csv(rep));
  data::write_text(dir / "classification.csv", eval::classification_csv(rep));
  data::write_text(dir / "taus.csv", taus_csv(taus));
  data::write_text(dir / "report.json", eval::report_json(rep).dump(2) + "\n");
  log << "evaluate: " << pairs.size() << " test pairs -> " << dir.string() << '\n';
}

// ---------------------------------------------------------------------------
// Text tables

inline std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

inline std::string render_tables(const eval::DetectionReport& rep, const scene::Registry& reg) {
  auto name = [&](int c) {
    return c >= 0 && static_cast<std::size_t>(c) < reg.size() ? reg[static_cast<std::size_t>(c)].name
                                                              : std::to_string(c);
  };
  std::ostringstream os;
  os << "Classification at the 0.5 gate\n";
  os << std::left << std::setw(18) << "class" << std::right << std::setw(8) << "support" << std::setw(8) << "P"
     << std::setw(8) << "R" << std::setw(8) << "F1" << '\n';
  for (const auto& r : rep.classification)
    os << std::left << std::setw(18) << name(r.class_id) << std::right << std::setw(8) << r.support
       << std::setw(8) << fmt(r.precision) << std::setw(8) << fmt(r.recall) << std::setw(8) << fmt(r.f1) << '\n';
  os << std::left << std::setw(18) << "macro" << std::right << std::setw(40) << fmt(rep.classification_macro_f1)
     << "\n\n";

  os << "Temporal detection\n";
  os << std::left << std::setw(8) << "method" << std::right << std::setw(5) << "tau" << std::setw(7) << "pairs"
     << std::setw(15) << "IoU" << std::setw(8) << "P" << std::setw(8) << "R" << std::setw(8) << "F1"
     << std::setw(8) << "PG" << '\n';
  for (const auto& s : rep.summary)
    os << std::left << std::setw(8) << s.method << std::right << std::setw(5) << s.tau << std::setw(7)
       << s.n_pairs << std::setw(15) << (fmt(s.mean_iou) + " +- " + fmt(s.std_iou)) << std::setw(8)
       << fmt(s.precision) << std::setw(8) << fmt(s.recall) << std::setw(8) << fmt(s.f1) << std::setw(8)
       << fmt(s.pg) << '\n';

  os << "\nPer-class temporal detection (IoU / F1)\n";
  const std::vector<std::string> cols{experiment::kIG, experiment::kFWWS, experiment::kFWSS};
  os << std::left << std::setw(18) << "class";
  for (const auto& m : cols) os << std::right << std::setw(16) << m;
  os << '\n';
  std::vector<int> classes;
  for (const auto& r : rep.per_class)
    if (std::find(classes.begin(), classes.end(), r.class_id) == classes.end()) classes.push_back(r.class_id);
  std::sort(classes.begin(), classes.end());
  for (int c : classes) {
    os << std::left << std::setw(18) << name(c);
    for (const auto& m : cols) {
      const auto* r = rep.row(c, m);
      os << std::right << std::setw(16) << (r ? fmt(r->mean_iou) + " / " + fmt(r->f1) : std::string("-"));
    }
    os << '\n';
  }
  return os.str();
}

inline void cmd_report(const Options& o, std::ostream& out) {
  auto run = run_dir(o);
  auto cfg = stored_config(o, run);
  auto dir = run.reports(o.tau);
  require(dir / "report.json", "run `igsed evaluate` first");
  auto rep = eval::report_from_json(data::read_json(dir / "report.json"));
  out << render_tables(rep, data::registry_for(cfg.dataset_config()));
}

// ---------------------------------------------------------------------------

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Runs one subcommand and maps failures to exit codes.
inline int dispatch(const std::string& command, const Options& o, std::ostream& out, std::ostream& err) {
  try {
    if (command == "synth") cmd_synth(o, out);
    else if (command == "train") cmd_train(o, out);
    else if (command == "attribute") cmd_attribute(o, out);
    else if (command == "sweep") cmd_sweep(o, out);
    else if (command == "evaluate") cmd_evaluate(o, out);
    else if (command == "report") cmd_report(o, out);
    else throw UsageError("unknown command '" + command + "'");
    return kOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidSpec& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace igsed::cli
