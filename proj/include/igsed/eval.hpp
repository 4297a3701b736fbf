#pragma once

// Frame-level temporal detection metrics on a fixed 100 ms grid: masks,
// IoU, frame F1, Pointing Game, percentile threshold sweeps and per-class
// macro-averaged reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igsed/common.hpp"
#include "igsed/model.hpp"
#include "igsed/scenegen.hpp"

namespace igsed::eval {

/// 100 ms frames; frame k spans [k/rate, (k+1)/rate).
struct FrameGrid {
  double frames_per_second = 10.0;
  std::size_t n_frames = 0;

  static FrameGrid for_duration(double clip_duration, double frames_per_second = 10.0) {
    FrameGrid g;
    g.frames_per_second = frames_per_second;
    g.n_frames = static_cast<std::size_t>(std::ceil(clip_duration * frames_per_second - 1e-9));
    return g;
  }
  double frame_len() const { return 1.0 / frames_per_second; }
  double start(std::size_t k) const { return static_cast<double>(k) / frames_per_second; }
  double end(std::size_t k) const { return static_cast<double>(k + 1) / frames_per_second; }
};

enum class MaskSource { ground_truth, attribution, framewise_model, random, energy };

struct FrameMask {
  std::vector<char> bits;
  MaskSource source = MaskSource::ground_truth;

  std::size_t size() const { return bits.size(); }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  bool operator[](std::size_t i) const { return bits[i] != 0; }
};

inline FrameMask gt_mask(const std::vector<scene::EventAnnotation>& events, int class_id,
                         const FrameGrid& grid) {
  FrameMask m{std::vector<char>(grid.n_frames, 0), MaskSource::ground_truth};
  for (const auto& e : events) {
    if (e.class_id != class_id) continue;
    for (std::size_t k = 0; k < grid.n_frames; ++k)
      if (e.onset < grid.end(k) && e.offset > grid.start(k)) m.bits[k] = 1;
  }
  return m;
}

/// Mean |score| over the samples of each grid frame; the last frame averages
/// over however many samples it has.
inline std::vector<double> attr_to_frames(std::span<const double> scores, double sample_rate,
                                          const FrameGrid& grid) {
  std::vector<double> out(grid.n_frames, 0.0);
  for (std::size_t k = 0; k < grid.n_frames; ++k) {
    auto lo = static_cast<std::size_t>(std::llround(grid.start(k) * sample_rate));
    auto hi = std::min(scores.size(), static_cast<std::size_t>(std::llround(grid.end(k) * sample_rate)));
    if (lo >= hi) continue;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += std::abs(scores[i]);
    out[k] = acc / static_cast<double>(hi - lo);
  }
  return out;
}

/// Nearest-rank percentile: the ceil(tau/100 * N)-th smallest value.
inline double nearest_rank_percentile(std::vector<double> values, int tau) {
  if (values.empty()) throw InvalidInput("percentile of an empty vector");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::size_t rank = (static_cast<std::size_t>(tau) * n + 99) / 100;
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

/// Frames strictly above the per-vector tau-th percentile.
inline FrameMask binarize(std::span<const double> values, int tau,
                          MaskSource source = MaskSource::attribution) {
  if (tau < 1 || tau > 99) throw InvalidInput("percentile threshold must be in 1..99");
  double thr = nearest_rank_percentile({values.begin(), values.end()}, tau);
  FrameMask m{std::vector<char>(values.size(), 0), source};
  for (std::size_t i = 0; i < values.size(); ++i) m.bits[i] = values[i] > thr ? 1 : 0;
  return m;
}

inline void require_same_length(const char* what, const FrameMask& a, const FrameMask& b) {
  if (a.size() != b.size())
    throw ShapeError(std::string(what) + ": mask lengths differ (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
}

/// |a & b| / |a | b|; two empty masks score 1.
inline double iou(const FrameMask& a, const FrameMask& b) {
  require_same_length("iou", a, b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct PRF {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Zero denominators give 0.
inline PRF prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PRF r;
  r.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

inline PRF frame_f1(const FrameMask& pred, const FrameMask& gt) {
  require_same_length("frame_f1", pred, gt);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tp += (pred[i] && gt[i]) ? 1 : 0;
    fp += (pred[i] && !gt[i]) ? 1 : 0;
    fn += (!pred[i] && gt[i]) ? 1 : 0;
  }
  return prf_from_counts(tp, fp, fn);
}

/// Whether the (first) maximum frame lies inside the ground truth.
inline bool pointing_game(std::span<const double> frame_values, const FrameMask& gt) {
  if (frame_values.size() != gt.size())
    throw ShapeError("pointing_game: " + std::to_string(frame_values.size()) + " values vs " +
                     std::to_string(gt.size()) + " mask frames");
  if (gt.count() == 0) throw ContractError("pointing_game: ground truth has no active frame");
  std::size_t best = 0;
  for (std::size_t i = 1; i < frame_values.size(); ++i)
    if (frame_values[i] > frame_values[best]) best = i;
  return gt[best];
}

/// Model frame whose span contains each grid frame's centre (clamped to the
/// last model frame).
inline std::vector<std::size_t> nearest_model_frames(std::size_t model_frames, double frame_duration,
                                                     const FrameGrid& grid) {
  std::vector<std::size_t> idx(grid.n_frames);
  for (std::size_t k = 0; k < grid.n_frames; ++k) {
    double centre = (static_cast<double>(k) + 0.5) / grid.frames_per_second;
    auto j = static_cast<std::size_t>(std::floor(centre / frame_duration));
    idx[k] = std::min(j, model_frames - 1);
  }
  return idx;
}

/// Framewise probabilities of one class resampled onto the grid.
inline std::vector<double> framewise_frame_values(const model::FramewisePrediction& fp, int class_id,
                                                  const FrameGrid& grid) {
  auto idx = nearest_model_frames(fp.frames(), fp.frame_duration, grid);
  std::vector<double> v(grid.n_frames);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = fp.probs(idx[k], static_cast<std::size_t>(class_id));
  return v;
}

inline FrameMask framewise_mask(const model::FramewisePrediction& fp, int class_id,
                                const FrameGrid& grid, int tau) {
  auto v = framewise_frame_values(fp, class_id, grid);
  return binarize(v, tau, MaskSource::framewise_model);
}

// ---------------------------------------------------------------------------
// Aggregation

/// One evaluated (clip, class) instance with every method's frame values.
struct EvalPair {
  std::string clip_id;
  int class_id = 0;
  FrameMask gt;
  std::map<std::string, std::vector<double>> frame_values;  // method -> grid values
};

struct PairMetrics {
  double iou = 0.0;
  PRF prf;
  bool pg_hit = false;
};

inline PairMetrics pair_metrics(const EvalPair& p, const std::string& method, int tau) {
  const auto& v = p.frame_values.at(method);
  auto mask = binarize(v, tau);
  PairMetrics m;
  m.iou = iou(mask, p.gt);
  m.prf = frame_f1(mask, p.gt);
  m.pg_hit = pointing_game(v, p.gt);
  return m;
}

constexpr int kTauMin = 1;
constexpr int kTauMax = 99;

struct SweepRow {
  int tau = 0;
  double iou = 0.0;
  double f1 = 0.0;
};

struct SweepCurve {
  std::string method;
  std::vector<SweepRow> rows;  // tau = 1..99
  int best_tau_iou = 0;        // first argmax
  int best_tau_f1 = 0;

  double iou_at(int tau) const { return rows.at(static_cast<std::size_t>(tau - kTauMin)).iou; }
  double f1_at(int tau) const { return rows.at(static_cast<std::size_t>(tau - kTauMin)).f1; }
};

/// Groups pair indices by class (ascending class id).
inline std::map<int, std::vector<std::size_t>> pairs_by_class(const std::vector<EvalPair>& pairs) {
  std::map<int, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < pairs.size(); ++i) by[pairs[i].class_id].push_back(i);
  return by;
}

/// Macro (over classes) of per-class mean IoU and F1 at every tau.
inline SweepCurve threshold_sweep(const std::vector<EvalPair>& pairs, const std::string& method) {
  SweepCurve c;
  c.method = method;
  auto by = pairs_by_class(pairs);
  for (int tau = kTauMin; tau <= kTauMax; ++tau) {
    double iou_sum = 0.0, f1_sum = 0.0;
    for (const auto& [cls, idx] : by) {
      double ci = 0.0, cf = 0.0;
      for (auto i : idx) {
        auto m = pair_metrics(pairs[i], method, tau);
        ci += m.iou;
        cf += m.prf.f1;
      }
      iou_sum += ci / static_cast<double>(idx.size());
      f1_sum += cf / static_cast<double>(idx.size());
    }
    double nc = by.empty() ? 1.0 : static_cast<double>(by.size());
    c.rows.push_back({tau, iou_sum / nc, f1_sum / nc});
  }
  c.best_tau_iou = kTauMin;
  c.best_tau_f1 = kTauMin;
  for (const auto& r : c.rows) {
    if (r.iou > c.iou_at(c.best_tau_iou)) c.best_tau_iou = r.tau;
    if (r.f1 > c.f1_at(c.best_tau_f1)) c.best_tau_f1 = r.tau;
  }
  return c;
}

inline std::string sweep_csv(const std::vector<SweepCurve>& curves) {
  std::ostringstream os;
  os.precision(10);
  os << "tau,method,iou,f1\n";
  for (const auto& c : curves)
    for (const auto& r : c.rows) os << r.tau << ',' << c.method << ',' << r.iou << ',' << r.f1 << '\n';
  return os.str();
}

struct ClassMethodRow {
  int class_id = 0;
  std::string method;
  std::size_t n = 0;
  double mean_iou = 0.0, std_iou = 0.0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double pg = 0.0;  // fraction of hits
};

struct MethodSummary {
  std::string method;
  int tau = 0;
  std::size_t n_pairs = 0;
  double mean_iou = 0.0;  // macro over classes
  double std_iou = 0.0;   // over all pairs
  double precision = 0.0, recall = 0.0, f1 = 0.0, pg = 0.0;  // macro
};

struct ClassificationRow {
  int class_id = 0;
  std::size_t support = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct DetectionReport {
  std::vector<ClassMethodRow> per_class;
  std::vector<MethodSummary> summary;
  std::vector<ClassificationRow> classification;
  double classification_macro_f1 = 0.0;

  const MethodSummary& method(const std::string& name) const {
    for (const auto& s : summary)
      if (s.method == name) return s;
    throw InvalidInput("report has no method '" + name + "'");
  }
  const ClassMethodRow* row(int class_id, const std::string& method) const {
    for (const auto& r : per_class)
      if (r.class_id == class_id && r.method == method) return &r;
    return nullptr;
  }
};

/// Per-class and macro metrics for each method at its threshold.
inline DetectionReport evaluate(const std::vector<EvalPair>& pairs,
                                const std::vector<std::pair<std::string, int>>& method_taus) {
  DetectionReport rep;
  auto by = pairs_by_class(pairs);
  for (const auto& [method, tau] : method_taus) {
    MethodSummary s;
    s.method = method;
    s.tau = tau;
    std::vector<double> all_iou;
    for (const auto& [cls, idx] : by) {
      ClassMethodRow r;
      r.class_id = cls;
      r.method = method;
      r.n = idx.size();
      std::vector<double> ious;
      for (auto i : idx) {
        auto m = pair_metrics(pairs[i], method, tau);
        ious.push_back(m.iou);
        all_iou.push_back(m.iou);
        r.precision += m.prf.precision;
        r.recall += m.prf.recall;
        r.f1 += m.prf.f1;
        r.pg += m.pg_hit ? 1.0 : 0.0;
      }
      const double n = static_cast<double>(idx.size());
      r.mean_iou = std::accumulate(ious.begin(), ious.end(), 0.0) / n;
      double var = 0.0;
      for (double v : ious) var += (v - r.mean_iou) * (v - r.mean_iou);
      r.std_iou = std::sqrt(var / n);
      r.precision /= n;
      r.recall /= n;
      r.f1 /= n;
      r.pg /= n;
      s.mean_iou += r.mean_iou;
      s.precision += r.precision;
      s.recall += r.recall;
      s.f1 += r.f1;
      s.pg += r.pg;
      rep.per_class.push_back(r);
    }
    const double nc = by.empty() ? 1.0 : static_cast<double>(by.size());
    s.mean_iou /= nc;
    s.precision /= nc;
    s.recall /= nc;
    s.f1 /= nc;
    s.pg /= nc;
    s.n_pairs = all_iou.size();
    if (!all_iou.empty()) {
      double mu = std::accumulate(all_iou.begin(), all_iou.end(), 0.0) / static_cast<double>(all_iou.size());
      double var = 0.0;
      for (double v : all_iou) var += (v - mu) * (v - mu);
      s.std_iou = std::sqrt(var / static_cast<double>(all_iou.size()));
    }
    rep.summary.push_back(s);
  }
  return rep;
}

/// Per-class precision/recall/F1 of clip predictions thresholded at `gate`.
inline std::vector<ClassificationRow> classification_table(
    const std::vector<std::vector<double>>& probs, const std::vector<std::vector<double>>& labels,
    double gate = 0.5) {
  if (probs.size() != labels.size()) throw ShapeError("classification: prediction/label count mismatch");
  std::size_t nc = probs.empty() ? 0 : probs.front().size();
  std::vector<ClassificationRow> rows;
  for (std::size_t c = 0; c < nc; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      bool pred = probs[i][c] > gate;
      bool truth = labels[i][c] > 0.5;
      support += truth ? 1 : 0;
      tp += (pred && truth) ? 1 : 0;
      fp += (pred && !truth) ? 1 : 0;
      fn += (!pred && truth) ? 1 : 0;
    }
    auto prf = prf_from_counts(tp, fp, fn);
    rows.push_back({static_cast<int>(c), support, prf.precision, prf.recall, prf.f1});
  }
  return rows;
}

inline double macro_f1(const std::vector<ClassificationRow>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.f1;
  return s / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Report serialization

inline std::string per_class_csv(const DetectionReport& rep) {
  std::ostringstream os;
  os.precision(10);
  os << "class_id,method,n,mean_iou,std_iou,precision,recall,f1,pg\n";
  for (const auto& r : rep.per_class)
    os << r.class_id << ',' << r.method << ',' << r.n << ',' << r.mean_iou << ',' << r.std_iou << ','
       << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.pg << '\n';
  return os.str();
}

inline std::string summary_csv(const DetectionReport& rep) {
  std::ostringstream os;
  os.precision(10);
  os << "method,tau,n_pairs,mean_iou,f1,std_iou,pg,precision,recall\n";
  for (const auto& s : rep.summary)
    os << s.method << ',' << s.tau << ',' << s.n_pairs << ',' << s.mean_iou << ',' << s.f1 << ','
       << s.std_iou << ',' << s.pg << ',' << s.precision << ',' << s.recall << '\n';
  return os.str();
}

inline std::string classification_csv(const DetectionReport& rep) {
  std::ostringstream os;
  os.precision(10);
  os << "class_id,support,precision,recall,f1\n";
  for (const auto& r : rep.classification)
    os << r.class_id << ',' << r.support << ',' << r.precision << ',' << r.recall << ',' << r.f1 << '\n';
  return os.str();
}

inline nlohmann::json report_json(const DetectionReport& rep) {
  nlohmann::json j;
  for (const auto& s : rep.summary)
    j["summary"].push_back({{"method", s.method},
                            {"tau", s.tau},
                            {"n_pairs", s.n_pairs},
                            {"mean_iou", s.mean_iou},
                            {"std_iou", s.std_iou},
                            {"precision", s.precision},
                            {"recall", s.recall},
                            {"f1", s.f1},
                            {"pg", s.pg}});
  for (const auto& r : rep.per_class)
    j["per_class"].push_back({{"class_id", r.class_id},
                              {"method", r.method},
                              {"n", r.n},
                              {"mean_iou", r.mean_iou},
                              {"std_iou", r.std_iou},
                              {"precision", r.precision},
                              {"recall", r.recall},
                              {"f1", r.f1},
                              {"pg", r.pg}});
  for (const auto& r : rep.classification)
    j["classification"].push_back({{"class_id", r.class_id},
                                   {"support", r.support},
                                   {"precision", r.precision},
                                   {"recall", r.recall},
                                   {"f1", r.f1}});
  j["classification_macro_f1"] = rep.classification_macro_f1;
  return j;
}

inline DetectionReport report_from_json(const nlohmann::json& j) {
  DetectionReport rep;
  for (const auto& s : j.value("summary", nlohmann::json::array()))
    rep.summary.push_back({s.at("method"), s.at("tau"), s.at("n_pairs"), s.at("mean_iou"),
                           s.at("std_iou"), s.at("precision"), s.at("recall"), s.at("f1"),
                           s.at("pg")});
  for (const auto& r : j.value("per_class", nlohmann::json::array()))
    rep.per_class.push_back({r.at("class_id"), r.at("method"), r.at("n"), r.at("mean_iou"),
                             r.at("std_iou"), r.at("precision"), r.at("recall"), r.at("f1"),
                             r.at("pg")});
  for (const auto& r : j.value("classification", nlohmann::json::array()))
    rep.classification.push_back(
        {r.at("class_id"), r.at("support"), r.at("precision"), r.at("recall"), r.at("f1")});
  rep.classification_macro_f1 = j.value("classification_macro_f1", 0.0);
  return rep;
}

}  // namespace igsed::eval
