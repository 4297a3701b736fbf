#pragma once

// Mini-batch Adam training with binary cross-entropy and early stopping on
// validation loss.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "igsed/common.hpp"
#include "igsed/grad.hpp"
#include "igsed/model.hpp"
#include "igsed/optim.hpp"
#include "igsed/scenegen.hpp"

namespace igsed::model {

enum class Supervision { weak, strong };

struct TrainConfig {
  int epochs = 100;
  int patience = 10;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  Supervision supervision = Supervision::weak;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1 || patience < 1 || patience > epochs)
      throw InvalidSpec("train: need 1 <= patience <= epochs");
    if (batch_size == 0 || !(lr > 0.0)) throw InvalidSpec("train: batch_size and lr must be positive");
  }
};

/// One training/validation item.
struct Example {
  Matrix logmel;                   // T_spec x n_mels
  std::vector<double> clip_labels;  // C
  Matrix frame_labels;             // C x T (model frame resolution)
};

/// Frame t covers [t*fd, (t+1)*fd); the last frame extends to the clip end.
/// Active iff the span overlaps an event of that class (half-open).
inline Matrix rasterize(const std::vector<scene::EventAnnotation>& events, std::size_t n_classes,
                        std::size_t n_frames, double frame_duration, double clip_duration) {
  Matrix m(n_classes, n_frames);
  for (const auto& e : events) {
    if (e.class_id < 0 || static_cast<std::size_t>(e.class_id) >= n_classes) continue;
    for (std::size_t t = 0; t < n_frames; ++t) {
      double lo = static_cast<double>(t) * frame_duration;
      double hi = t + 1 == n_frames ? std::max(clip_duration, (t + 1) * frame_duration)
                                    : static_cast<double>(t + 1) * frame_duration;
      if (e.onset < hi && e.offset > lo) m(static_cast<std::size_t>(e.class_id), t) = 1.0;
    }
  }
  return m;
}

/// Merges runs of active frames back into events (one per run).
inline std::vector<scene::EventAnnotation> derasterize(const Matrix& labels, double frame_duration,
                                                       double clip_duration) {
  std::vector<scene::EventAnnotation> out;
  for (std::size_t c = 0; c < labels.rows; ++c) {
    std::size_t t = 0;
    while (t < labels.cols) {
      if (labels(c, t) <= 0.5) {
        ++t;
        continue;
      }
      std::size_t start = t;
      while (t < labels.cols && labels(c, t) > 0.5) ++t;
      double off = t == labels.cols ? clip_duration : static_cast<double>(t) * frame_duration;
      out.push_back({static_cast<int>(c), static_cast<double>(start) * frame_duration, off, 0.0});
    }
  }
  return out;
}

inline std::vector<double> clip_labels(const std::vector<scene::EventAnnotation>& events,
                                       std::size_t n_classes) {
  std::vector<double> y(n_classes, 0.0);
  for (const auto& e : events)
    if (e.class_id >= 0 && static_cast<std::size_t>(e.class_id) < n_classes)
      y[static_cast<std::size_t>(e.class_id)] = 1.0;
  return y;
}

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool stopped_early = false;
  /// Max |graph clip score - clip_from_frames(framewise_forward)| on the probe
  /// batch; always 0 for the clip head.
  double probe_gap = 0.0;
};

inline std::string training_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss,stopped_early,probe_gap\n";
  for (const auto& r : log)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << (r.stopped_early ? 1 : 0)
       << ',' << r.probe_gap << '\n';
  return os.str();
}

struct TrainResult {
  Classifier model;
  std::vector<TrainLogRow> log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Loss of one example as a graph scalar, according to head and supervision.
inline grad::DiffTensor example_loss(const Classifier& m, const Example& ex, Supervision sup) {
  auto x = logmel_tensor(ex.logmel);
  if (sup == Supervision::strong) {
    if (m.config().head != HeadKind::framewise)
      throw InvalidSpec("strong supervision needs the framewise head");
    auto p = m.frame_scores(x);
    if (p.size() != ex.frame_labels.data.size())
      throw ShapeError("frame labels have " + std::to_string(ex.frame_labels.data.size()) +
                       " entries, model produced " + std::to_string(p.size()));
    return grad::binary_cross_entropy(p, ex.frame_labels.data);
  }
  return grad::binary_cross_entropy(m.head_scores(x), ex.clip_labels);
}

inline double dataset_loss(const Classifier& m, const std::vector<Example>& data, Supervision sup) {
  grad::NoGradGuard ng;
  double total = 0.0;
  for (const auto& ex : data) total += example_loss(m, ex, sup).item();
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

/// Mean and standard deviation of all log-mel values.
inline std::pair<double, double> logmel_statistics(const std::vector<Example>& data) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& ex : data)
    for (double v : ex.logmel.data) {
      sum += v;
      sq += v * v;
      ++n;
    }
  if (n == 0) return {0.0, 1.0};
  double mean = sum / static_cast<double>(n);
  double var = std::max(sq / static_cast<double>(n) - mean * mean, 1e-12);
  return {mean, std::sqrt(var)};
}

/// Compares the clip score the weak framewise loss consumes (graph max over
/// time) with clip_from_frames(framewise_forward(.)).
inline double probe_clip_consistency(const Classifier& m, const std::vector<Example>& probe) {
  if (m.config().head != HeadKind::framewise) return 0.0;
  grad::NoGradGuard ng;
  double gap = 0.0;
  for (const auto& ex : probe) {
    auto graph_scores = m.head_scores(logmel_tensor(ex.logmel)).value();
    auto ref = clip_from_frames(framewise_forward(m, ex.logmel));
    for (std::size_t c = 0; c < ref.size(); ++c)
      gap = std::max(gap, std::abs(graph_scores[c] - ref[c]));
  }
  return gap;
}

inline TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                         const ModelConfig& mcfg, const TrainConfig& tcfg) {
  tcfg.validate();
  if (train_set.empty()) throw InvalidInput("train: empty training set");
  if (tcfg.supervision == Supervision::strong && mcfg.head != HeadKind::framewise)
    throw InvalidSpec("strong supervision needs the framewise head");

  // ReLU maps NaN to 0, so bad features would otherwise train silently.
  for (const auto* set : {&train_set, &val_set})
    for (std::size_t i = 0; i < set->size(); ++i)
      for (double v : (*set)[i].logmel.data)
        if (!std::isfinite(v))
          throw NumericalError(std::string("train: non-finite log-mel value in ") +
                               (set == &train_set ? "training" : "validation") + " example " +
                               std::to_string(i));

  Classifier model(mcfg, derive_seed(tcfg.seed, 0x696e6974ULL));
  auto [mu, sd] = logmel_statistics(train_set);
  model.set_input_normalization(mu, sd);

  grad::AdamState adam;
  grad::AdamConfig acfg;
  acfg.lr = tcfg.lr;

  std::vector<Example> probe(val_set.begin(),
                             val_set.begin() + static_cast<std::ptrdiff_t>(
                                                   std::min(tcfg.batch_size, val_set.size())));
  const std::vector<Example>& monitor = val_set.empty() ? train_set : val_set;

  TrainResult result{model.clone(), {}, 0, std::numeric_limits<double>::infinity()};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int waited = 0;

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    Rng rng(derive_seed(tcfg.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      std::size_t end = std::min(order.size(), start + tcfg.batch_size);
      double scale = 1.0 / static_cast<double>(end - start);
      model.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        auto loss = example_loss(model, train_set[order[k]], tcfg.supervision);
        if (!std::isfinite(loss.item()))
          throw NumericalError("training diverged: non-finite loss at epoch " +
                               std::to_string(epoch) + ", example " + std::to_string(order[k]));
        epoch_loss += loss.item();
        grad::backward(grad::affine(loss, scale));
      }
      grad::adam_step(model.parameters(), adam, acfg);
    }

    TrainLogRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / static_cast<double>(order.size());
    row.val_loss = dataset_loss(model, monitor, tcfg.supervision);
    if (!std::isfinite(row.val_loss))
      throw NumericalError("training diverged: non-finite validation loss at epoch " +
                           std::to_string(epoch));
    if (tcfg.supervision == Supervision::weak) {
      row.probe_gap = probe_clip_consistency(model, probe);
      if (row.probe_gap != 0.0)
        throw ContractError("weak framewise loss does not consume clip_from_frames scores (gap " +
                            std::to_string(row.probe_gap) + ")");
    }
    if (row.val_loss < result.best_val_loss) {
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      result.model = model.clone();
      waited = 0;
    } else if (++waited >= tcfg.patience) {
      row.stopped_early = epoch < tcfg.epochs;
    }
    result.log.push_back(row);
    if (waited >= tcfg.patience) break;
  }
  return result;
}

}  // namespace igsed::model
