// Acceptance run: one PASS/FAIL line per criterion. Criteria 2, 5 (training
// half) and 7-10 train the desk pipeline for three seeds (about 30 minutes).

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "igsed/experiment.hpp"
#include "support.hpp"

using namespace igsed;
using igsed::testing::away_from_zero;
using igsed::testing::max_directional_error;
using igsed::testing::random_values;
using igsed::testing::ScalarFn;
using igsed::testing::weighted_sum;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

void note(const std::string& s) {
  static const auto t0 = std::chrono::steady_clock::now();
  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "[%7.1fs] %s\n", dt, s.c_str());
}

// ---------------------------------------------------------------------------
// 1. Finite differences

struct Probe {
  std::string name;
  ScalarFn f;
  grad::Shape shape;
  std::function<std::vector<double>(Rng&)> point;
};

double worst_over_points(const Probe& p, Rng& rng, int points) {
  double worst = 0.0;
  for (int i = 0; i < points; ++i) worst = std::max(worst, max_directional_error(p.f, p.shape, p.point(rng), 1, rng));
  return worst;
}

void criterion_1() {
  using namespace grad;
  Rng rng(101);
  auto any = [](std::size_t n) { return [n](Rng& r) { return random_values(n, r); }; };
  auto kinkless = [](std::size_t n) { return [n](Rng& r) { return away_from_zero(n, r); }; };
  auto positive = [](std::size_t n) { return [n](Rng& r) { return random_values(n, r, 0.2, 2.0); }; };
  auto other = tensor({3, 4}, random_values(12, rng));
  auto mat = tensor({4, 5}, random_values(20, rng));
  auto w = tensor({3, 2, 3, 3}, random_values(54, rng, -0.5, 0.5));
  auto b = tensor({3}, random_values(3, rng, -0.1, 0.1));
  std::vector<double> targets{1, 0, 1, 1, 0, 0};

  std::vector<Probe> probes{
      {"add", [&](const DiffTensor& t) { return weighted_sum(add(t, other), 1); }, {3, 4}, any(12)},
      {"sub", [&](const DiffTensor& t) { return weighted_sum(sub(other, t), 1); }, {3, 4}, any(12)},
      {"mul", [&](const DiffTensor& t) { return weighted_sum(mul(t, other), 1); }, {3, 4}, any(12)},
      {"affine", [](const DiffTensor& t) { return weighted_sum(affine(t, -1.7, 0.2), 1); }, {3, 4}, any(12)},
      {"relu", [](const DiffTensor& t) { return weighted_sum(relu(t), 1); }, {3, 4}, kinkless(12)},
      {"sigmoid", [](const DiffTensor& t) { return weighted_sum(sigmoid(t), 1); }, {3, 4}, any(12)},
      {"exp", [](const DiffTensor& t) { return weighted_sum(exp(t), 1); }, {3, 4}, any(12)},
      {"log", [](const DiffTensor& t) { return weighted_sum(log(t), 1); }, {3, 4}, positive(12)},
      {"log_floor", [](const DiffTensor& t) { return weighted_sum(log_floor(t, 1e-3), 1); }, {3, 4}, positive(12)},
      {"reshape", [](const DiffTensor& t) { return weighted_sum(reshape(t, {4, 3}), 2); }, {3, 4}, any(12)},
      {"slice", [](const DiffTensor& t) { return weighted_sum(slice(t, 1, 1, 3), 2); }, {3, 4}, any(12)},
      {"broadcast", [](const DiffTensor& t) { return weighted_sum(broadcast(t, {3, 4}), 2); }, {3, 1}, any(3)},
      {"mean", [](const DiffTensor& t) { return weighted_sum(mean(t, 1), 3); }, {2, 3, 4}, any(24)},
      {"max", [](const DiffTensor& t) { return weighted_sum(max(t, 2), 3); }, {2, 3, 4}, any(24)},
      {"matmul", [&](const DiffTensor& t) { return weighted_sum(matmul(t, mat), 4); }, {3, 4}, any(12)},
      {"conv2d", [&](const DiffTensor& t) { return weighted_sum(conv2d(t, w, b, {1, 1}), 5); }, {2, 6, 5}, any(60)},
      {"conv2d_strided", [&](const DiffTensor& t) { return weighted_sum(conv2d(t, w, b, {2, 0}), 5); }, {2, 7, 6}, any(84)},
      {"avg_pool2d", [](const DiffTensor& t) { return weighted_sum(avg_pool2d(t, 2, 2), 6); }, {2, 6, 4}, any(48)},
      {"bce", [&](const DiffTensor& t) { return binary_cross_entropy(t, targets); }, {6},
       [](Rng& r) { return random_values(6, r, 0.05, 0.95); }},
  };

  double worst = 0.0;
  std::string worst_name;
  for (const auto& p : probes) {
    double e = worst_over_points(p, rng, 100);
    if (e > worst) worst = e, worst_name = p.name;
  }

  // Full model, log-mel input and waveform input through the frontend.
  model::ModelConfig mc;
  mc.spectral_hop_s = 80.0 / 8000.0;
  model::Classifier net(mc, 7);
  net.set_input_normalization(-6.0, 3.0);
  net.set_trainable(false);
  dsp::LogMelFrontend fe(dsp::MelFrontendConfig{}, 8000.0);
  ScalarFn on_logmel = [&](const DiffTensor& t) { return weighted_sum(net.head_scores(t), 8); };
  ScalarFn on_wave = [&](const DiffTensor& t) { return weighted_sum(net.head_scores(fe.graph(t)), 9); };
  double model_err = max_directional_error(on_logmel, {201, 32}, random_values(201 * 32, rng, -9.0, 1.0), 100, rng);
  data::DatasetConfig dc;
  dc.n_train = 1;
  dc.n_val = 0;
  dc.n_test = 0;
  auto clip = data::build_dataset(dc).clips[0].audio.samples;
  // Waveform samples sit near 1e-2, so the step shrinks with them to stay off relu/max kinks.
  double wave_err = max_directional_error(on_wave, {clip.size()}, clip, 100, rng, 1e-6);

  bool ok = worst < 1e-4 && model_err < 1e-4 && wave_err < 1e-4;
  verdict(1, ok,
          "max rel err: primitives " + num(worst) + " (" + worst_name + "), model " + num(model_err) +
              ", waveform->model " + num(wave_err) + " (100 probes each, tol 1e-4)");
}

// ---------------------------------------------------------------------------
// 3. Linear-model exactness

void criterion_3() {
  Rng rng(303);
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  double worst_ulps = 0.0;
  for (int n : {1, 2, 3, 7, 8, 50, 64, 100, 512, 1000}) {
    auto w = random_values(256, rng), x = random_values(256, rng);
    std::vector<double> zero(256, 0.0);
    auto m = attrib::integrated_gradients(
        [&](const grad::DiffTensor& t) {
          return grad::affine(grad::mean_all(grad::mul(grad::tensor({256}, w), t)), 256.0);
        },
        x, zero, n);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double exact = w[i] * x[i];
      worst_ulps = std::max(worst_ulps, std::abs(m.scores[i] - exact) / (kEps * std::abs(exact)));
    }
  }
  verdict(3, worst_ulps <= 4.0,
          "max |IG_i - w_i x_i| = " + num(worst_ulps, 3) + " eps*|w_i x_i| over n in {1..1000} (tol 4 eps)");
}

// ---------------------------------------------------------------------------
// 4. Metric oracles

void criterion_4() {
  Rng rng(404);
  const int trials = 10000;
  int bad_iou = 0, bad_f1 = 0, bad_gt = 0, bad_pg = 0;
  for (int t = 0; t < trials; ++t) {
    std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 100));
    eval::FrameMask a{std::vector<char>(n), eval::MaskSource::attribution};
    eval::FrameMask b{std::vector<char>(n), eval::MaskSource::ground_truth};
    double pa = rng.uniform(), pb = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      a.bits[i] = rng.uniform() < pa;
      b.bits[i] = rng.uniform() < pb;
    }
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += a.bits[i] && b.bits[i];
      fp += a.bits[i] && !b.bits[i];
      fn += !a.bits[i] && b.bits[i];
    }
    double want_iou = tp + fp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    if (std::abs(eval::iou(a, b) - want_iou) > 1e-12) ++bad_iou;
    auto prf = eval::frame_f1(a, b);
    double wp = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double wr = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double wf = tp ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
    if (std::abs(prf.precision - wp) > 1e-12 || std::abs(prf.recall - wr) > 1e-12 || std::abs(prf.f1 - wf) > 1e-12)
      ++bad_f1;

    // gt_mask against a 1 ms raster of the events.
    std::vector<scene::EventAnnotation> ev;
    int ne = static_cast<int>(rng.uniform_int(0, 4));
    for (int e = 0; e < ne; ++e) {
      auto on = rng.uniform_int(0, 1999);
      auto off = rng.uniform_int(on + 1, 2000);
      ev.push_back({static_cast<int>(rng.uniform_int(0, 2)), on / 1000.0, off / 1000.0, 0.0});
    }
    std::vector<char> fine(2000, 0), want(20, 0);
    for (const auto& e : ev)
      if (e.class_id == 0)
        for (auto ms = std::llround(e.onset * 1000); ms < std::llround(e.offset * 1000); ++ms)
          fine[static_cast<std::size_t>(ms)] = 1;
    for (std::size_t ms = 0; ms < 2000; ++ms) want[ms / 100] |= fine[ms];
    if (eval::gt_mask(ev, 0, eval::FrameGrid::for_duration(2.0)).bits != want) ++bad_gt;

    // Pointing game against the first-argmax definition.
    if (b.count() == 0) b.bits[0] = 1;
    std::vector<double> v(n);
    for (double& x : v) x = static_cast<double>(rng.uniform_int(0, 5));
    std::size_t arg = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    if (eval::pointing_game(v, b) != (b.bits[arg] != 0)) ++bad_pg;
  }
  verdict(4, bad_iou + bad_f1 + bad_gt + bad_pg == 0,
          "mismatches over 1e4 instances: iou " + std::to_string(bad_iou) + ", frame_f1 " + std::to_string(bad_f1) +
              ", gt_mask " + std::to_string(bad_gt) + ", pointing_game " + std::to_string(bad_pg));
}

// ---------------------------------------------------------------------------
// Pipeline runs

struct SeedRun {
  std::uint64_t seed = 0;
  experiment::PipelineResult result;
};

double stationary_minus_transient(const SeedRun& r, double* stat, double* trans) {
  const auto reg = data::registry_for(r.result.dataset.config);
  double s = 0, t = 0;
  int ns = 0, nt = 0;
  for (const auto& row : r.result.report.per_class) {
    if (row.method != experiment::kIG) continue;
    if (reg[static_cast<std::size_t>(row.class_id)].kind == scene::EventKind::stationary) {
      s += row.mean_iou;
      ++ns;
    } else {
      t += row.mean_iou;
      ++nt;
    }
  }
  *stat = ns ? s / ns : 0.0;
  *trans = nt ? t / nt : 0.0;
  return *stat - *trans;
}

void criterion_2(const SeedRun& run) {
  const auto& f = run.result.features;
  const auto& clip_model = run.result.trained.at(experiment::Head::clip).model;
  dsp::LogMelFrontend fe(dsp::MelFrontendConfig{}, run.result.dataset.config.sample_rate);
  int pairs = 0, within = 0, monotone = 0;
  double worst_rel = 0.0;
  for (auto split : {data::Split::test, data::Split::val}) {
    for (std::size_t i = 0; i < f.examples(split).size() && pairs < 20; ++i) {
      auto probs = model::predict_clip(clip_model, f.examples(split)[i].logmel);
      for (int c : experiment::detected_classes(probs, 0.5)) {
        if (pairs == 20) break;
        const auto& audio = f.clips(split)[i]->audio;
        auto m8 = attrib::integrated_gradients(clip_model, fe, audio, c, 8);
        auto m512 = attrib::integrated_gradients(clip_model, fe, audio, c, 512);
        double delta = std::abs(m512.f_input - m512.f_baseline);
        double rel = m512.completeness_gap / delta;
        worst_rel = std::max(worst_rel, rel);
        within += m512.completeness_gap <= 0.01 * delta;
        monotone += m512.completeness_gap <= m8.completeness_gap;
        ++pairs;
      }
    }
  }
  verdict(2, pairs >= 20 && within == pairs && monotone == pairs,
          std::to_string(pairs) + " pairs; gap512 <= 1% on " + std::to_string(within) + ", gap512 <= gap8 on " +
              std::to_string(monotone) + "; worst gap512/|dF| = " + num(worst_rel));
}

void criterion_5(const std::vector<SeedRun>& runs) {
  Rng rng(505);
  int bad_max = 0;
  for (int t = 0; t < 1000; ++t) {
    auto T = static_cast<std::size_t>(rng.uniform_int(1, 64));
    auto C = static_cast<std::size_t>(rng.uniform_int(1, 12));
    model::FramewisePrediction fp{Matrix(T, C), 0.08};
    fp.probs.data = random_values(T * C, rng, 0.0, 1.0);
    auto got = model::clip_from_frames(fp);
    for (std::size_t c = 0; c < C; ++c) {
      double m = fp.probs(0, c);
      for (std::size_t i = 1; i < T; ++i) m = fp.probs(i, c) > m ? fp.probs(i, c) : m;
      bad_max += got[c] != m;
    }
  }
  // Each weak framewise epoch checked the probe batch.
  std::size_t epochs = 0, nonzero = 0;
  int bad_loss = 0;
  for (const auto& r : runs) {
    const auto& tr = r.result.trained.at(experiment::Head::fw_ws);
    for (const auto& row : tr.log) {
      ++epochs;
      nonzero += row.probe_gap != 0.0;
    }
    grad::NoGradGuard ng;
    for (const auto& ex : r.result.features.val) {
      double loss = model::example_loss(tr.model, ex, model::Supervision::weak).item();
      auto clip = model::clip_from_frames(model::framewise_forward(tr.model, ex.logmel));
      double ref = grad::binary_cross_entropy(grad::tensor({clip.size()}, clip), ex.clip_labels).item();
      bad_loss += loss != ref;
    }
  }
  verdict(5, bad_max == 0 && nonzero == 0 && bad_loss == 0 && epochs > 0,
          "column-max mismatches " + std::to_string(bad_max) + "/1000; probe gap nonzero in " +
              std::to_string(nonzero) + "/" + std::to_string(epochs) + " weak epochs; loss != BCE(clip_from_frames) on " +
              std::to_string(bad_loss) + " val clips");
}

void criterion_6(const SeedRun& run) {
  std::vector<eval::FrameMask> gts;
  const auto& ds = run.result.dataset;
  auto grid = eval::FrameGrid::for_duration(ds.config.clip_duration);
  std::vector<const data::ClipRecord*> clips;
  for (const auto& c : ds.clips)
    if (c.split != data::Split::train)
      for (int k : experiment::gt_classes(c.events)) {
        gts.push_back(eval::gt_mask(c.events, k, grid));
        clips.push_back(&c);
      }
  const int trials = 6000;
  double hits = 0.0, expected = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::size_t i = static_cast<std::size_t>(t) % gts.size();
    auto map = attrib::random_attribution(clips[i]->audio, derive_seed(run.seed, 0x70676361ULL, static_cast<std::uint64_t>(t)));
    auto frames = eval::attr_to_frames(map.magnitudes(), ds.config.sample_rate, grid);
    hits += eval::pointing_game(frames, gts[i]);
    expected += static_cast<double>(gts[i].count()) / static_cast<double>(gts[i].size());
  }
  double rate = hits / trials, frac = expected / trials;
  verdict(6, std::abs(rate - frac) <= 0.02,
          "random PG hit rate " + num(rate) + " vs active-frame fraction " + num(frac) + " over " +
              std::to_string(trials) + " trials (tol 0.02)");
}

void criteria_7_to_10(const std::vector<SeedRun>& runs) {
  using namespace experiment;
  int a = 0, b = 0, c = 0, trend = 0;
  std::ostringstream d7, d8, d9, d10;
  bool all_rows = true, inequality = true, f1_ok = true;
  std::vector<int> taus;
  for (const auto& r : runs) {
    const auto& rep = r.result.report;
    const auto &ig = rep.method(kIG), &ws = rep.method(kFWWS), &ss = rep.method(kFWSS);
    const auto &rnd = rep.method(kRandom), &en = rep.method(kEnergy);
    bool ok_a = ss.mean_iou >= ws.mean_iou;
    bool ok_b = ig.mean_iou - rnd.mean_iou >= 0.10 && ig.mean_iou - en.mean_iou >= 0.10;
    bool ok_c = ig.pg >= 0.60 && ws.pg >= ig.pg && ss.pg >= ig.pg;
    a += ok_a;
    b += ok_b;
    c += ok_c;
    d7 << " | seed " << r.seed << ": IoU IG " << num(ig.mean_iou, 3) << " WS " << num(ws.mean_iou, 3) << " SS "
       << num(ss.mean_iou, 3) << " rnd " << num(rnd.mean_iou, 3) << " en " << num(en.mean_iou, 3) << "; PG IG "
       << num(ig.pg, 3) << " WS " << num(ws.pg, 3) << " SS " << num(ss.pg, 3);

    for (const auto* curves : {&r.result.val_curves, &r.result.test_curves})
      for (const auto& cv : *curves) {
        bool full = cv.rows.size() == 99;
        for (int t = 1; full && t <= 99; ++t) full = cv.rows[static_cast<std::size_t>(t - 1)].tau == t;
        all_rows = all_rows && full;
      }
    int tau = 0;
    for (const auto& [m, t] : r.result.taus)
      if (m == kIG) tau = t;
    taus.push_back(tau);
    const eval::SweepCurve* test_ig = nullptr;
    for (const auto& cv : r.result.test_curves)
      if (cv.method == kIG) test_ig = &cv;
    bool strict = test_ig && test_ig->iou_at(tau) > test_ig->iou_at(80);
    inequality = inequality && strict;
    d8 << " | seed " << r.seed << ": tau " << tau << ", IoU " << (test_ig ? num(test_ig->iou_at(tau), 3) : "?")
       << " vs " << (test_ig ? num(test_ig->iou_at(80), 3) : "?") << " at 80";

    f1_ok = f1_ok && rep.classification_macro_f1 >= 0.80;
    d9 << " seed " << r.seed << ": " << num(rep.classification_macro_f1, 3) << ";";

    double st = 0, tr = 0;
    trend += stationary_minus_transient(r, &st, &tr) > 0.0;
    d10 << " seed " << r.seed << ": " << num(st, 3) << " vs " << num(tr, 3) << ";";
  }
  const int need = 2;
  verdict(7, a >= need && b >= need && c >= need,
          "(a) FW-SS>=FW-WS " + std::to_string(a) + "/3, (b) IG beats random and energy by 0.10 " +
              std::to_string(b) + "/3, (c) PG ordering " + std::to_string(c) + "/3" + d7.str());
  // +/-10 around the median seed's tau.
  auto sorted = taus;
  std::sort(sorted.begin(), sorted.end());
  int median = sorted[sorted.size() / 2], dev = 0;
  for (int t : taus) dev = std::max(dev, std::abs(t - median));
  verdict(8, all_rows && dev <= 10 && inequality,
          std::string("99 rows per curve: ") + (all_rows ? "yes" : "no") + "; IG tau max |tau - median " +
              std::to_string(median) + "| = " + std::to_string(dev) + " (tol 10)" + d8.str());
  verdict(9, f1_ok, "clip macro-F1 at 0.5 gate (>= 0.80):" + d9.str());
  verdict(10, trend >= need, "stationary vs transient IG IoU, " + std::to_string(trend) + "/3 seeds:" + d10.str());
}

}  // namespace

int main() {
  criterion_1();
  criterion_3();
  criterion_4();

  std::vector<SeedRun> runs(3);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    runs[i].seed = i + 1;
    experiment::ExperimentConfig cfg;
    cfg.seed = runs[i].seed;
    experiment::run_pipeline(cfg, runs[i].result,
                             [&](const std::string& s) { note("seed " + std::to_string(runs[i].seed) + ": " + s); });
  }
  criterion_2(runs[0]);
  criterion_5(runs);
  criterion_6(runs[0]);
  criteria_7_to_10(runs);

  std::printf("acceptance: %d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
