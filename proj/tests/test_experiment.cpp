#include <gtest/gtest.h>

#include "igsed/experiment.hpp"

using namespace igsed;
using namespace igsed::experiment;

TEST(Config, IniRoundTrip) {
  for (auto cfg : {ExperimentConfig{}, ExperimentConfig::full_scale()}) {
    cfg.seed = 42;
    cfg.out = "runs/a";
    cfg.train.lr = 3e-4;
    cfg.attribution.methods = {attrib::Method::energy, attrib::Method::ig};
    cfg.evaluation.selection = TauSelection::fixed;
    cfg.evaluation.fixed_tau = 56;
    auto text = to_ini(cfg);
    auto back = from_ini(text);
    EXPECT_EQ(to_ini(back), text);
    EXPECT_EQ(back.seed, 42u);
    EXPECT_EQ(back.attribution.methods.size(), 2u);
    EXPECT_EQ(back.evaluation.fixed_tau, 56);
    EXPECT_EQ(back.blocks.size(), cfg.blocks.size());
  }
}

TEST(Config, MissingKeysKeepDefaults) {
  auto c = from_ini("[run]\nseed = 9\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(to_ini(c), [] {
    ExperimentConfig d;
    d.seed = 9;
    return to_ini(d);
  }());
}

TEST(Config, ModelListsBroadcast) {
  auto c = from_ini("[model]\nchannels = 4,8\nkernel = 5\n");
  ASSERT_EQ(c.blocks.size(), 2u);
  EXPECT_EQ(c.blocks[0].channels, 4u);
  EXPECT_EQ(c.blocks[1].channels, 8u);
  EXPECT_EQ(c.blocks[1].kernel, 5u);
  EXPECT_EQ(c.model_config(Head::clip).embed_dim, 8u);
}

TEST(Config, RejectsUnknownOrInvalidEntries) {
  EXPECT_THROW(from_ini("[runn]\nseed = 1\n"), InvalidSpec);
  EXPECT_THROW(from_ini("[train]\nepoch = 3\n"), InvalidSpec);
  EXPECT_THROW(from_ini("[model]\nchannels = 4,8\nkernel = 3,3,3\n"), InvalidSpec);
  EXPECT_THROW(from_ini("[train]\nepochs = 5\npatience = 10\n"), InvalidSpec);
  EXPECT_THROW(from_ini("[evaluation]\ntau_selection = best\n"), InvalidSpec);
  EXPECT_THROW(from_ini("[evaluation]\nfixed_tau = 100\n"), InvalidSpec);
  EXPECT_THROW(from_ini("[attribution]\nsteps = 0\n"), InvalidSpec);
  EXPECT_THROW(from_ini("[dataset\n"), InvalidSpec);
  EXPECT_THROW(load_config("/nonexistent/config.ini"), IoError);
}

TEST(Config, DerivedModelAndTrainSettings) {
  ExperimentConfig c;
  auto m = c.model_config(Head::fw_ws);
  EXPECT_EQ(m.head, model::HeadKind::framewise);
  EXPECT_EQ(m.n_mels, c.frontend.n_mels);
  EXPECT_DOUBLE_EQ(m.spectral_hop_s, static_cast<double>(c.frontend.hop) / c.dataset.sample_rate);
  EXPECT_EQ(c.train_config(Head::fw_ss).supervision, model::Supervision::strong);
  EXPECT_EQ(c.train_config(Head::fw_ws).supervision, model::Supervision::weak);
  EXPECT_NE(c.train_config(Head::clip).seed, c.train_config(Head::fw_ws).seed);
  c.seed = 5;
  EXPECT_EQ(c.dataset_config().seed, 5u);
  auto full = ExperimentConfig::full_scale();
  EXPECT_EQ(full.model_config(Head::clip).output_frames(1001), 31u);
}

TEST(Config, FullScalePresetFromIni) {
  auto c = from_ini("[run]\nscale = full_scale\n[train]\nepochs = 12\n");
  EXPECT_EQ(to_ini(c), to_ini([] {
              auto f = ExperimentConfig::full_scale();
              f.train.epochs = 12;
              return f;
            }()));
  EXPECT_EQ(c.dataset_config().sample_rate, 32000.0);
  EXPECT_EQ(static_cast<std::size_t>(c.dataset.clip_duration * c.dataset.sample_rate), 320000u);
  EXPECT_THROW(from_ini("[run]\nscale = huge\n"), InvalidSpec);
}

TEST(Heads, NamesRoundTrip) {
  for (auto h : kHeads) EXPECT_EQ(head_from_string(to_string(h)), h);
  EXPECT_THROW(head_from_string("fw"), InvalidInput);
}

TEST(RandomMaps, SeedDependsOnRunClipAndClass) {
  auto a = random_map_seed(1, "test_0001", 2);
  EXPECT_EQ(a, random_map_seed(1, "test_0001", 2));
  EXPECT_NE(a, random_map_seed(2, "test_0001", 2));
  EXPECT_NE(a, random_map_seed(1, "test_0002", 2));
  EXPECT_NE(a, random_map_seed(1, "test_0001", 3));
}

namespace {

struct Tiny {
  ExperimentConfig cfg;
  data::Dataset ds;
  dsp::LogMelFrontend fe{dsp::MelFrontendConfig{}, 8000.0};
  Features f;

  Tiny() {
    cfg.dataset.n_train = 4;
    cfg.dataset.n_val = 4;
    cfg.dataset.n_test = 12;
    ds = data::build_dataset(cfg.dataset_config());
    f = prepare_features(ds, fe, cfg.model_config(Head::clip));
  }
};

}  // namespace

TEST(EvalPairs, OnlyGatedGroundTruthClassesAreEvaluated) {
  Tiny t;
  TrainedHeads heads{model::Classifier(t.cfg.model_config(Head::clip), 1),
                     model::Classifier(t.cfg.model_config(Head::fw_ws), 2),
                     model::Classifier(t.cfg.model_config(Head::fw_ss), 3)};
  auto& bias = heads.clip.parameter("head.bias").mutable_value();
  for (std::size_t c = 0; c < bias.size(); ++c) bias[c] = c == 3 || c == 6 ? -40.0 : 40.0;

  std::map<std::pair<std::string, int>, std::vector<double>> energy;
  MapLookup lookup = [&](attrib::Method, const std::string& id, int c) -> const std::vector<double>* {
    for (const auto* clip : t.f.test_clips)
      if (clip->clip_id == id) {
        auto& v = energy[{id, c}];
        v = attrib::energy_attribution(clip->audio).scores;
        return &v;
      }
    return nullptr;
  };
  t.cfg.attribution.methods = {attrib::Method::energy};
  auto pairs = build_eval_pairs(t.cfg, t.f, data::Split::test, heads, lookup);

  std::size_t expected = 0;
  for (const auto* clip : t.f.test_clips)
    for (int c : gt_classes(clip->events)) expected += (c != 3 && c != 6) ? 1 : 0;
  EXPECT_EQ(pairs.size(), expected);
  for (const auto& p : pairs) {
    EXPECT_NE(p.class_id, 3);
    EXPECT_NE(p.class_id, 6);
    EXPECT_GT(p.gt.count(), 0u);
    EXPECT_EQ(p.frame_values.size(), 3u);  // FW-WS, FW-SS, energy
    EXPECT_EQ(p.frame_values.at(kEnergy).size(), 20u);
  }
  auto rep = eval::evaluate(pairs, {{kEnergy, 50}});
  EXPECT_EQ(rep.row(3, kEnergy), nullptr);
  EXPECT_EQ(rep.row(6, kEnergy), nullptr);

  MapLookup none = [](attrib::Method, const std::string&, int) -> const std::vector<double>* { return nullptr; };
  if (expected > 0) {
    EXPECT_THROW(build_eval_pairs(t.cfg, t.f, data::Split::test, heads, none), IoError);
  }
}

TEST(Attribution, TargetsFollowMethod) {
  Tiny t;
  const auto& clip = *t.f.test_clips[0];
  std::vector<double> probs(10, 0.1);
  probs[7] = 0.9;
  EXPECT_EQ(attribution_targets(attrib::Method::ig, clip, probs, 0.5), std::vector<int>{7});
  EXPECT_EQ(attribution_targets(attrib::Method::energy, clip, probs, 0.5), gt_classes(clip.events));
  EXPECT_THROW(compute_attribution(t.cfg, attrib::Method::ig, nullptr, t.fe, clip, 7), ContractError);
  auto r = compute_attribution(t.cfg, attrib::Method::random, nullptr, t.fe, clip, 2);
  EXPECT_EQ(r.request.class_id, 2);
  EXPECT_EQ(r.request.seed, random_map_seed(t.cfg.seed, clip.clip_id, 2));
}

TEST(Methods, EvaluatedSetFollowsConfig) {
  ExperimentConfig c;
  EXPECT_EQ(evaluated_methods(c), kReportMethods);
  c.attribution.methods = {attrib::Method::ig};
  EXPECT_EQ(evaluated_methods(c), (std::vector<std::string>{kIG, kFWWS, kFWSS}));
}
