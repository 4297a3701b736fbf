#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "igsed/dataset.hpp"
#include "igsed/scenegen.hpp"
#include "igsed/wav.hpp"
#include "support.hpp"

using namespace igsed;
using namespace igsed::scene;

namespace {

std::vector<double> window_rms(const std::vector<double>& v, std::size_t win) {
  std::vector<double> out;
  for (std::size_t s = 0; s + win <= v.size(); s += win)
    out.push_back(rms(std::span<const double>(v).subspan(s, win)));
  return out;
}

double db(double ratio) { return 20.0 * std::log10(ratio); }

// Polyphony at every 1 ms midpoint; endpoints lie on the 1 ms grid.
int brute_force_polyphony(const std::vector<EventAnnotation>& ev) {
  int worst = 0;
  for (int m = 0; m < 3000; ++m) {
    double t = (m + 0.5) / 1000.0;
    int active = 0;
    for (const auto& e : ev) active += (e.onset <= t && t < e.offset) ? 1 : 0;
    worst = std::max(worst, active);
  }
  return worst;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Registry, DefaultRegistryIsValidAndPartitioned) {
  auto reg = default_registry();
  EXPECT_NO_THROW(validate_registry(reg));
  ASSERT_EQ(reg.size(), 10u);
  for (int c = 0; c < 5; ++c) EXPECT_EQ(reg[c].kind, EventKind::stationary);
  for (int c = 5; c < 10; ++c) EXPECT_EQ(reg[c].kind, EventKind::transient);
  auto bad = reg;
  bad[3].max_duration = 5.0;
  EXPECT_THROW(validate_registry(bad), InvalidSpec);
}

TEST(SynthesizeEvent, StationaryClassesHaveSteadyShortTimeRms) {
  auto reg = default_registry();
  for (int c = 0; c < 5; ++c)
    for (int variant = 0; variant < 4; ++variant) {
      auto def = make_variant(reg[c], variant_seed(Pool::train, c, variant));
      auto v = synthesize_event(def, 1.0, 100 + variant, 8000.0);
      ASSERT_EQ(v.size(), 8000u);
      auto w = window_rms(v, 800);
      double hi = *std::max_element(w.begin(), w.end()), lo = *std::min_element(w.begin(), w.end());
      EXPECT_LE(hi / lo, 2.0) << reg[c].name << " variant " << variant;
    }
}

TEST(SynthesizeEvent, ClickTrainEnergyIsConcentrated) {
  auto reg = default_registry();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto v = synthesize_event(reg[5], 0.5, seed, 8000.0);
    auto w = window_rms(v, 80);
    std::vector<double> e;
    for (double r : w) e.push_back(r * r);
    std::sort(e.rbegin(), e.rend());
    double total = std::accumulate(e.begin(), e.end(), 0.0);
    double top = std::accumulate(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(e.size() / 5), 0.0);
    EXPECT_GE(top / total, 0.6) << "seed " << seed;
  }
}

TEST(SynthesizeEvent, DeterministicAndUnitRms) {
  auto reg = default_registry();
  for (const auto& def : reg) {
    double d = (def.min_duration + def.max_duration) / 2.0;
    auto a = synthesize_event(def, d, 42, 8000.0);
    auto b = synthesize_event(def, d, 42, 8000.0);
    EXPECT_EQ(a, b) << def.name;
    EXPECT_NEAR(rms(a), 1.0, 1e-12) << def.name;
  }
}

TEST(SynthesizeEvent, DurationOutsideRangeIsRejected) {
  auto reg = default_registry();
  EXPECT_THROW(synthesize_event(reg[0], 0.1, 1, 8000.0), InvalidSpec);
  EXPECT_THROW(synthesize_event(reg[5], 1.5, 1, 8000.0), InvalidSpec);
}

TEST(SynthesizeScene, ForcedEventMatchesAnnotationAndSnr) {
  auto reg = default_registry();
  SceneSpec spec;
  spec.seed = 17;
  spec.forced_events = {{0, 0, 4000, 3200, 20.0}};
  auto sc = synthesize_scene(spec, reg);
  ASSERT_EQ(sc.events.size(), 1u);
  EXPECT_EQ(sc.events[0].class_id, 0);
  EXPECT_DOUBLE_EQ(sc.events[0].onset, 0.5);
  EXPECT_DOUBLE_EQ(sc.events[0].offset, 0.9);
  const auto& x = sc.clip.samples;
  ASSERT_EQ(x.size(), 16000u);
  double in = rms(std::span<const double>(x).subspan(4000, 3200));
  std::vector<double> outside(x.begin(), x.begin() + 4000);
  outside.insert(outside.end(), x.begin() + 7200, x.end());
  EXPECT_NEAR(db(in / rms(outside)), 20.0, 1.0);
}

TEST(SynthesizeScene, BackgroundOnlyScene) {
  auto reg = default_registry();
  SceneSpec spec;
  spec.n_events = 0;
  spec.seed = 3;
  auto sc = synthesize_scene(spec, reg);
  EXPECT_TRUE(sc.events.empty());
  auto bg = render_background(spec);
  ASSERT_EQ(sc.clip.samples.size(), bg.size());
  for (std::size_t i = 0; i < bg.size(); ++i)
    EXPECT_EQ(sc.clip.samples[i], static_cast<double>(static_cast<float>(bg[i])));
  EXPECT_NEAR(db(rms(bg)), -55.0, 1e-9);
}

TEST(SynthesizeScene, ClipsAreFiniteBoundedAndExactLength) {
  auto reg = default_registry();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.n_events = 3;
    spec.snr_low_db = spec.snr_high_db = 60.0;  // forces peak normalization
    auto sc = synthesize_scene(spec, reg);
    ASSERT_EQ(sc.clip.samples.size(), 16000u);
    for (double v : sc.clip.samples) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_LE(std::abs(v), 1.0);
    }
    EXPECT_LT(sc.normalization_scale, 1.0);
  }
}

TEST(SynthesizeScene, AnnotationsRespectClipAndClassBounds) {
  auto reg = default_registry();
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.n_events = static_cast<int>(seed % 3) + 1;
    auto placements = sample_placements(spec, reg);
    for (const auto& e : annotate(placements, spec.sample_rate)) {
      EXPECT_GE(e.onset, 0.0);
      EXPECT_LT(e.onset, e.offset);
      EXPECT_LE(e.offset, spec.clip_duration);
      const auto& def = reg[static_cast<std::size_t>(e.class_id)];
      EXPECT_GE(e.offset - e.onset, def.min_duration - 1e-9);
      EXPECT_LE(e.offset - e.onset, def.max_duration + 1e-9);
      EXPECT_GE(e.snr_db, 15.0);
      EXPECT_LE(e.snr_db, 25.0);
    }
  }
}

TEST(SynthesizeScene, MeasuredSnrMatchesSampledSnr) {
  auto reg = default_registry();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.n_events = 2;
    spec.keep_stems = true;
    auto sc = synthesize_scene(spec, reg);
    if (max_polyphony(sc.events) > 1) continue;  // non-overlapping events only
    const double bg = rms(sc.background);
    for (std::size_t i = 0; i < sc.events.size(); ++i) {
      const auto& p = sc.placements[i];
      double fg = rms(std::span<const double>(sc.foregrounds[i]).subspan(p.onset_sample, p.length));
      EXPECT_NEAR(db(fg / bg), p.snr_db, 1.5);
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(RejectOverlap, ThreeWayOverlapRejected) {
  EXPECT_FALSE(reject_overlap({{0, 0.0, 1.0, 0}, {1, 0.5, 1.5, 0}, {2, 0.9, 2.0, 0}}, 2));
}

TEST(RejectOverlap, TouchingIsNotOverlap) {
  EXPECT_TRUE(reject_overlap({{0, 0.0, 1.0, 0}, {1, 1.0, 2.0, 0}}, 1));
}

TEST(RejectOverlap, MatchesGridCounter) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<EventAnnotation> ev;
    int n = static_cast<int>(rng.uniform_int(1, 5));
    for (int i = 0; i < n; ++i) {
      auto a = rng.uniform_int(0, 2900);
      auto len = rng.uniform_int(1, 1500);
      ev.push_back({i, a / 1000.0, std::min<std::int64_t>(a + len, 3000) / 1000.0, 0});
    }
    int poly = brute_force_polyphony(ev);
    for (int k = 1; k <= 4; ++k) EXPECT_EQ(reject_overlap(ev, k), poly <= k) << "trial " << trial;
  }
}

TEST(RejectOverlap, FilteredScenesRespectPolyphony) {
  auto reg = default_registry();
  int retained = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.n_events = 3;
    auto ev = annotate(sample_placements(spec, reg), spec.sample_rate);
    if (!reject_overlap(ev, 2)) continue;
    ++retained;
    EXPECT_LE(max_polyphony(ev), 2);
  }
  EXPECT_GT(retained, 0);
  EXPECT_LT(retained, 1000);
}

// ---------------------------------------------------------------------------
// Dataset

TEST(Dataset, DeskDatasetRegeneratesFromManifestSeeds) {
  data::DatasetConfig cfg;
  auto ds = data::build_dataset(cfg);
  ASSERT_EQ(ds.clips.size(), 500u);
  EXPECT_EQ(ds.split(data::Split::train).size(), 400u);
  EXPECT_EQ(ds.split(data::Split::val).size(), 50u);
  EXPECT_EQ(ds.split(data::Split::test).size(), 50u);
  EXPECT_EQ(ds.train_stats.retained, 400u);
  EXPECT_EQ(ds.train_stats.generated, ds.train_stats.retained + ds.train_stats.rejected);
  auto manifest = data::manifest_json(ds);
  ASSERT_EQ(manifest.at("clips").size(), 500u);
  for (const auto& e : manifest.at("clips")) {
    auto split = data::split_from_string(e.at("split").get<std::string>());
    auto r = data::regenerate_clip(cfg, ds.registry, split, e.at("seed").get<std::uint64_t>(),
                                   e.at("clip_id").get<std::string>());
    EXPECT_EQ(hex64(r.hash), e.at("hash").get<std::string>());
  }
  for (const auto& c : ds.clips) {
    EXPECT_LE(max_polyphony(c.events), 2);
    EXPECT_GE(c.events.size(), 1u);
    EXPECT_LE(c.events.size(), 3u);
  }
}

TEST(Dataset, BuildIsDeterministic) {
  data::DatasetConfig cfg;
  cfg.n_train = 30;
  cfg.n_val = cfg.n_test = 10;
  auto a = data::manifest_json(data::build_dataset(cfg));
  auto b = data::manifest_json(data::build_dataset(cfg));
  EXPECT_EQ(a.dump(), b.dump());
  cfg.seed = 2;
  EXPECT_NE(a.dump(), data::manifest_json(data::build_dataset(cfg)).dump());
}

TEST(Dataset, PoolsShareNoVariantSeeds) {
  data::DatasetConfig cfg;
  cfg.n_train = cfg.n_val = cfg.n_test = 2;
  auto m = data::manifest_json(data::build_dataset(cfg));
  std::set<std::pair<int, std::uint64_t>> train;
  std::size_t n_eval = 0;
  for (const auto& c : m.at("registry"))
    for (const auto& s : c.at("variant_seeds").at("train"))
      train.insert({c.at("class_id").get<int>(), s.get<std::uint64_t>()});
  for (const auto& c : m.at("registry"))
    for (const auto& s : c.at("variant_seeds").at("eval")) {
      ++n_eval;
      EXPECT_FALSE(train.count({c.at("class_id").get<int>(), s.get<std::uint64_t>()}));
    }
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(n_eval, 80u);
}

TEST(Dataset, FullScaleClipsHaveFullLength) {
  auto cfg = data::DatasetConfig::full_scale();
  auto reg = data::registry_for(cfg);
  EXPECT_NO_THROW(validate_registry(reg));
  auto c = data::regenerate_clip(cfg, reg, data::Split::train, 99, "x");
  EXPECT_EQ(c.audio.samples.size(), 320000u);
  EXPECT_EQ(c.audio.sample_rate, 32000.0);
}

TEST(Dataset, SaveLoadRoundTripIsBitIdentical) {
  data::DatasetConfig cfg;
  cfg.n_train = 12;
  cfg.n_val = cfg.n_test = 4;
  auto ds = data::build_dataset(cfg);
  auto dir = fresh_dir("igsed_dataset_test");
  data::save_dataset(ds, dir);
  auto back = data::load_dataset(dir);
  ASSERT_EQ(back.clips.size(), ds.clips.size());
  for (std::size_t i = 0; i < ds.clips.size(); ++i) {
    EXPECT_EQ(back.clips[i].audio.samples, ds.clips[i].audio.samples);
    ASSERT_EQ(back.clips[i].events.size(), ds.clips[i].events.size());
    for (std::size_t k = 0; k < ds.clips[i].events.size(); ++k) {
      EXPECT_EQ(back.clips[i].events[k].onset, ds.clips[i].events[k].onset);
      EXPECT_EQ(back.clips[i].events[k].offset, ds.clips[i].events[k].offset);
    }
  }
  EXPECT_EQ(data::manifest_json(back).dump(), data::manifest_json(ds).dump());
  std::filesystem::remove_all(dir);
}

TEST(Dataset, TamperedClipIsDetected) {
  data::DatasetConfig cfg;
  cfg.n_train = 2;
  cfg.n_val = cfg.n_test = 1;
  auto ds = data::build_dataset(cfg);
  auto dir = fresh_dir("igsed_dataset_tamper");
  data::save_dataset(ds, dir);
  auto samples = ds.clips[0].audio.samples;
  samples[100] += 0.25;
  wav::write_float32(dir / "train" / (ds.clips[0].clip_id + ".wav"), samples, 8000);
  EXPECT_THROW(data::load_dataset(dir), IoError);
  EXPECT_THROW(data::load_dataset(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// WAV

TEST(Wav, Float32RoundTrip) {
  auto dir = fresh_dir("igsed_wav_test");
  std::vector<double> x{0.0, 0.5, -0.25, 1.0, -1.0, static_cast<double>(0.1f)};
  wav::write_float32(dir / "a.wav", x, 16000);
  auto w = wav::read(dir / "a.wav");
  EXPECT_EQ(w.sample_rate, 16000.0);
  EXPECT_EQ(w.samples, x);
  std::filesystem::remove_all(dir);
}

TEST(Wav, ReadsPcm16) {
  auto dir = fresh_dir("igsed_wav_pcm");
  std::vector<std::int16_t> s{0, 16384, -32768, 32767};
  std::ofstream out(dir / "p.wav", std::ios::binary);
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  u32(36 + 8);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(1);
  u32(8000);
  u32(16000);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(8);
  out.write(reinterpret_cast<const char*>(s.data()), 8);
  out.close();
  auto w = wav::read(dir / "p.wav");
  ASSERT_EQ(w.samples.size(), 4u);
  EXPECT_EQ(w.samples[0], 0.0);
  EXPECT_EQ(w.samples[1], 0.5);
  EXPECT_EQ(w.samples[2], -1.0);
  EXPECT_EQ(w.sample_rate, 8000.0);
  std::filesystem::remove_all(dir);
}

TEST(Wav, MissingFileIsIoError) {
  EXPECT_THROW(wav::read("/nonexistent/x.wav"), IoError);
}
