#pragma once

// Train/validation/test datasets of synthetic scenes, their on-disk layout
// (WAV clips, JSON Lines annotations, JSON manifest) and regeneration.

#include <filesystem>
#include <iomanip>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igsed/common.hpp"
#include "igsed/scenegen.hpp"
#include "igsed/wav.hpp"

namespace igsed::data {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split '" + s + "' (expected train, val or test)");
}

struct DatasetConfig {
  std::size_t n_train = 400;
  std::size_t n_val = 50;
  std::size_t n_test = 50;
  double clip_duration = 2.0;
  double sample_rate = 8000.0;
  double snr_low_db = 15.0;
  double snr_high_db = 25.0;
  double background_db = -55.0;
  int min_events = 1;
  int max_events = 3;
  int max_polyphony = 2;
  int variants_per_class = 8;
  /// Longest event duration; class ranges are scaled to it.
  double max_event_duration = 1.4;
  std::uint64_t seed = 1;

  /// 823/96/97 clips of 10 s at 32 kHz with events up to 4.2 s.
  static DatasetConfig full_scale() {
    DatasetConfig c;
    c.n_train = 823;
    c.n_val = 96;
    c.n_test = 97;
    c.clip_duration = 10.0;
    c.sample_rate = 32000.0;
    c.max_event_duration = 4.2;
    return c;
  }

  void validate() const {
    if (min_events < 1 || max_events > 3 || min_events > max_events)
      throw InvalidSpec("dataset: events per clip must satisfy 1 <= min <= max <= 3");
    if (max_polyphony < 1) throw InvalidSpec("dataset: max_polyphony must be >= 1");
    if (variants_per_class < 1) throw InvalidSpec("dataset: variants_per_class must be >= 1");
    if (!(max_event_duration < clip_duration))
      throw InvalidSpec("dataset: clip_duration must exceed max_event_duration");
  }

  nlohmann::json to_json() const {
    return {{"n_train", n_train},
            {"n_val", n_val},
            {"n_test", n_test},
            {"clip_duration", clip_duration},
            {"sample_rate", sample_rate},
            {"snr_low_db", snr_low_db},
            {"snr_high_db", snr_high_db},
            {"background_db", background_db},
            {"min_events", min_events},
            {"max_events", max_events},
            {"max_polyphony", max_polyphony},
            {"variants_per_class", variants_per_class},
            {"max_event_duration", max_event_duration},
            {"seed", seed}};
  }

  static DatasetConfig from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.n_train = j.at("n_train").get<std::size_t>();
    c.n_val = j.at("n_val").get<std::size_t>();
    c.n_test = j.at("n_test").get<std::size_t>();
    c.clip_duration = j.at("clip_duration").get<double>();
    c.sample_rate = j.at("sample_rate").get<double>();
    c.snr_low_db = j.at("snr_low_db").get<double>();
    c.snr_high_db = j.at("snr_high_db").get<double>();
    c.background_db = j.at("background_db").get<double>();
    c.min_events = j.at("min_events").get<int>();
    c.max_events = j.at("max_events").get<int>();
    c.max_polyphony = j.at("max_polyphony").get<int>();
    c.variants_per_class = j.at("variants_per_class").get<int>();
    c.max_event_duration = j.at("max_event_duration").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

/// Default classes with durations rescaled so the longest is `max_duration`
/// (minimum stays at 0.25 s).
inline scene::Registry registry_for(const DatasetConfig& cfg) {
  auto reg = scene::default_registry();
  double longest = 0.0;
  for (const auto& d : reg) longest = std::max(longest, d.max_duration);
  double k = cfg.max_event_duration / longest;
  for (auto& d : reg) {
    d.max_duration *= k;
    d.min_duration = std::max(0.25, std::min(d.min_duration * k, d.max_duration));
  }
  return reg;
}

struct ClipRecord {
  std::string clip_id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  int n_events = 0;
  double normalization_scale = 1.0;
  std::uint64_t hash = 0;
  std::vector<scene::EventAnnotation> events;
  scene::AudioClip audio;
};

struct RetentionStats {
  std::size_t generated = 0;
  std::size_t rejected = 0;
  std::size_t retained = 0;
};

struct Dataset {
  DatasetConfig config;
  scene::Registry registry;
  std::vector<ClipRecord> clips;
  RetentionStats train_stats, eval_stats;

  std::vector<const ClipRecord*> split(Split s) const {
    std::vector<const ClipRecord*> out;
    for (const auto& c : clips)
      if (c.split == s) out.push_back(&c);
    return out;
  }
  std::size_t n_classes() const { return registry.size(); }
};

inline scene::SceneSpec scene_spec_for(const DatasetConfig& cfg, scene::Pool pool,
                                       std::uint64_t clip_seed) {
  scene::SceneSpec s;
  s.clip_duration = cfg.clip_duration;
  s.sample_rate = cfg.sample_rate;
  s.snr_low_db = cfg.snr_low_db;
  s.snr_high_db = cfg.snr_high_db;
  s.background_db = cfg.background_db;
  s.pool = pool;
  s.variants_per_class = cfg.variants_per_class;
  s.seed = clip_seed;
  Rng rng(derive_seed(clip_seed, 0x6e6576ULL));
  s.n_events = static_cast<int>(rng.uniform_int(cfg.min_events, cfg.max_events));
  return s;
}

inline std::uint64_t clip_hash(const scene::AudioClip& clip) {
  std::vector<float> f(clip.samples.begin(), clip.samples.end());
  return hash_values<float>(f);
}

/// Re-synthesizes one clip from its seed.
inline ClipRecord regenerate_clip(const DatasetConfig& cfg, const scene::Registry& reg, Split split,
                                  std::uint64_t seed, std::string clip_id) {
  auto pool = split == Split::train ? scene::Pool::train : scene::Pool::eval;
  auto spec = scene_spec_for(cfg, pool, seed);
  auto sc = scene::render_scene(spec, reg, scene::sample_placements(spec, reg));
  ClipRecord r;
  r.clip_id = std::move(clip_id);
  r.split = split;
  r.seed = seed;
  r.n_events = spec.n_events;
  r.normalization_scale = sc.normalization_scale;
  r.events = sc.events;
  r.audio = std::move(sc.clip);
  r.audio.clip_id = r.clip_id;
  r.hash = clip_hash(r.audio);
  return r;
}

/// Generates candidates per pool until the requested number of clips pass
/// the polyphony filter. Validation takes the first retained eval-pool
/// clips, test the rest.
inline Dataset build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.registry = registry_for(cfg);
  scene::validate_registry(ds.registry);

  auto fill = [&](scene::Pool pool, std::size_t wanted, RetentionStats& stats,
                  std::uint64_t pool_tag) {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t i = 0; seeds.size() < wanted; ++i) {
      std::uint64_t seed = derive_seed(cfg.seed, pool_tag, i);
      auto spec = scene_spec_for(cfg, pool, seed);
      spec.validate(ds.registry);
      auto placements = scene::sample_placements(spec, ds.registry);
      ++stats.generated;
      if (!scene::reject_overlap(scene::annotate(placements, cfg.sample_rate),
                                 cfg.max_polyphony)) {
        ++stats.rejected;
        continue;
      }
      seeds.push_back(seed);
    }
    stats.retained = seeds.size();
    return seeds;
  };

  auto train_seeds = fill(scene::Pool::train, cfg.n_train, ds.train_stats, 1);
  auto eval_seeds = fill(scene::Pool::eval, cfg.n_val + cfg.n_test, ds.eval_stats, 2);

  auto add = [&](Split split, std::uint64_t seed, std::size_t index) {
    std::ostringstream id;
    id << to_string(split) << '_' << std::setw(5) << std::setfill('0') << index;
    ds.clips.push_back(regenerate_clip(cfg, ds.registry, split, seed, id.str()));
  };
  for (std::size_t i = 0; i < train_seeds.size(); ++i) add(Split::train, train_seeds[i], i);
  for (std::size_t i = 0; i < eval_seeds.size(); ++i) {
    if (i < cfg.n_val)
      add(Split::val, eval_seeds[i], i);
    else
      add(Split::test, eval_seeds[i], i - cfg.n_val);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json annotation_json(const std::string& clip_id, const scene::EventAnnotation& e) {
  return {{"clip_id", clip_id},
          {"class_id", e.class_id},
          {"onset_s", e.onset},
          {"offset_s", e.offset},
          {"snr_db", e.snr_db}};
}

inline nlohmann::json manifest_json(const Dataset& ds) {
  nlohmann::json m;
  m["format"] = "igsed-dataset-1";
  m["config"] = ds.config.to_json();
  m["global_seed"] = ds.config.seed;
  auto stats = [](const RetentionStats& s) {
    return nlohmann::json{{"generated", s.generated}, {"rejected", s.rejected},
                          {"retained", s.retained}};
  };
  m["retention"] = {{"train_pool", stats(ds.train_stats)}, {"eval_pool", stats(ds.eval_stats)}};
  nlohmann::json reg = nlohmann::json::array();
  for (const auto& d : ds.registry) {
    nlohmann::json pools;
    for (auto pool : {scene::Pool::train, scene::Pool::eval}) {
      nlohmann::json seeds = nlohmann::json::array();
      for (int v = 0; v < ds.config.variants_per_class; ++v)
        seeds.push_back(scene::variant_seed(pool, d.class_id, v));
      pools[scene::to_string(pool)] = seeds;
    }
    reg.push_back({{"class_id", d.class_id},
                   {"name", d.name},
                   {"kind", scene::to_string(d.kind)},
                   {"generator", scene::to_string(d.params.generator)},
                   {"min_duration", d.min_duration},
                   {"max_duration", d.max_duration},
                   {"variant_seeds", pools}});
  }
  m["registry"] = reg;
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : ds.clips)
    clips.push_back({{"clip_id", c.clip_id},
                     {"split", to_string(c.split)},
                     {"seed", c.seed},
                     {"n_events", c.n_events},
                     {"normalization_scale", c.normalization_scale},
                     {"hash", hex64(c.hash)},
                     {"file", std::string(to_string(c.split)) + "/" + c.clip_id + ".wav"}});
  m["clips"] = clips;
  return m;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

/// Writes `dir/{train,val,test}/<clip>.wav`, `annotations.jsonl` and
/// `manifest.json`.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (auto s : {Split::train, Split::val, Split::test}) fs::create_directories(dir / to_string(s));
  std::ostringstream jsonl;
  for (const auto& c : ds.clips) {
    wav::write_float32(dir / to_string(c.split) / (c.clip_id + ".wav"), c.audio.samples,
                       static_cast<std::uint32_t>(ds.config.sample_rate));
    for (const auto& e : c.events) jsonl << annotation_json(c.clip_id, e).dump() << '\n';
  }
  write_text(dir / "annotations.jsonl", jsonl.str());
  write_text(dir / "manifest.json", manifest_json(ds).dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "manifest.json"))
    throw IoError("no dataset at " + dir.string() + " (missing manifest.json; run synth first)");
  auto m = read_json(dir / "manifest.json");
  Dataset ds;
  ds.config = DatasetConfig::from_json(m.at("config"));
  ds.registry = registry_for(ds.config);
  auto stats = [](const nlohmann::json& j) {
    return RetentionStats{j.at("generated").get<std::size_t>(), j.at("rejected").get<std::size_t>(),
                          j.at("retained").get<std::size_t>()};
  };
  ds.train_stats = stats(m.at("retention").at("train_pool"));
  ds.eval_stats = stats(m.at("retention").at("eval_pool"));

  std::map<std::string, std::vector<scene::EventAnnotation>> events;
  {
    auto path = dir / "annotations.jsonl";
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      events[j.at("clip_id").get<std::string>()].push_back(
          {j.at("class_id").get<int>(), j.at("onset_s").get<double>(),
           j.at("offset_s").get<double>(), j.at("snr_db").get<double>()});
    }
  }
  for (const auto& e : m.at("clips")) {
    ClipRecord c;
    c.clip_id = e.at("clip_id").get<std::string>();
    c.split = split_from_string(e.at("split").get<std::string>());
    c.seed = e.at("seed").get<std::uint64_t>();
    c.n_events = e.at("n_events").get<int>();
    c.normalization_scale = e.at("normalization_scale").get<double>();
    c.events = events[c.clip_id];
    auto w = wav::read(dir / e.at("file").get<std::string>());
    c.audio.samples = std::move(w.samples);
    c.audio.sample_rate = w.sample_rate;
    c.audio.clip_id = c.clip_id;
    c.hash = clip_hash(c.audio);
    if (hex64(c.hash) != e.at("hash").get<std::string>())
      throw IoError("clip " + c.clip_id + " does not match its manifest hash");
    ds.clips.push_back(std::move(c));
  }
  return ds;
}

}  // namespace igsed::data
