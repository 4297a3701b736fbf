#pragma once

// Small CNN classifier over log-mel input: conv blocks (conv -> ReLU ->
// average pool), frequency averaging, then either
//   clip head:      max over time -> linear -> sigmoid, or
//   framewise head: linear -> sigmoid per frame, clip score = max over time.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igsed/checkpoint.hpp"
#include "igsed/common.hpp"
#include "igsed/grad.hpp"

namespace igsed::model {

using grad::DiffTensor;

struct ConvBlockSpec {
  std::size_t channels = 8;
  std::size_t kernel = 3;
  std::size_t pool_time = 2;
  std::size_t pool_freq = 2;
};

enum class HeadKind { clip, framewise };

inline const char* to_string(HeadKind h) { return h == HeadKind::clip ? "clip" : "framewise"; }

struct ModelConfig {
  std::size_t n_classes = 10;
  std::size_t n_mels = 32;
  std::vector<ConvBlockSpec> blocks{{8, 3, 2, 2}, {16, 3, 2, 2}, {32, 3, 2, 2}};
  std::size_t embed_dim = 32;
  HeadKind head = HeadKind::clip;
  /// Seconds between spectral frames (frontend hop / sample rate).
  double spectral_hop_s = 0.01;

  /// Six blocks, five 2x2 pools then none, with narrow
  /// channels, for 64-mel input at 10 ms hop.
  static ModelConfig full_scale(std::size_t channels = 4) {
    ModelConfig c;
    c.n_mels = 64;
    c.blocks.clear();
    for (int i = 0; i < 5; ++i) c.blocks.push_back({channels, 3, 2, 2});
    c.blocks.push_back({channels, 3, 1, 1});
    c.embed_dim = channels;
    c.spectral_hop_s = 320.0 / 32000.0;
    return c;
  }

  void validate() const {
    if (n_classes == 0 || n_mels == 0) throw InvalidSpec("model: n_classes and n_mels must be >= 1");
    if (blocks.empty()) throw InvalidSpec("model: need at least one conv block");
    std::size_t f = n_mels;
    for (const auto& b : blocks) {
      if (b.channels == 0 || b.kernel == 0 || b.kernel % 2 == 0 || b.pool_time == 0 ||
          b.pool_freq == 0)
        throw InvalidSpec("model: conv blocks need positive channels, odd kernels, pools >= 1");
      f /= b.pool_freq;
    }
    if (f == 0) throw InvalidSpec("model: frequency pooling exceeds n_mels");
    if (embed_dim != blocks.back().channels)
      throw InvalidSpec("model: embed_dim must equal the last block's channel count");
  }

  std::size_t time_downsampling() const {
    std::size_t d = 1;
    for (const auto& b : blocks) d *= b.pool_time;
    return d;
  }

  /// Model frames for a T_spec-frame spectrogram (floor at every pool).
  std::size_t output_frames(std::size_t t_spec) const {
    for (const auto& b : blocks) t_spec /= b.pool_time;
    return t_spec;
  }

  double frame_duration() const { return spectral_hop_s * static_cast<double>(time_downsampling()); }

  nlohmann::json to_json() const {
    nlohmann::json bl = nlohmann::json::array();
    for (const auto& b : blocks)
      bl.push_back({{"channels", b.channels},
                    {"kernel", b.kernel},
                    {"pool_time", b.pool_time},
                    {"pool_freq", b.pool_freq}});
    return {{"n_classes", n_classes}, {"n_mels", n_mels},   {"blocks", bl},
            {"embed_dim", embed_dim}, {"head", to_string(head)}, {"spectral_hop_s", spectral_hop_s}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.n_mels = j.at("n_mels").get<std::size_t>();
    c.blocks.clear();
    for (const auto& b : j.at("blocks"))
      c.blocks.push_back({b.at("channels").get<std::size_t>(), b.at("kernel").get<std::size_t>(),
                          b.at("pool_time").get<std::size_t>(),
                          b.at("pool_freq").get<std::size_t>()});
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.head = j.at("head").get<std::string>() == "clip" ? HeadKind::clip : HeadKind::framewise;
    c.spectral_hop_s = j.at("spectral_hop_s").get<double>();
    return c;
  }
};

/// Per-frame class probabilities, T x C.
struct FramewisePrediction {
  Matrix probs;
  double frame_duration = 0.0;

  std::size_t frames() const { return probs.rows; }
  std::size_t classes() const { return probs.cols; }
};

/// p_clip(c) = max_t p_t(c)
inline std::vector<double> clip_from_frames(const FramewisePrediction& fp) {
  std::vector<double> out(fp.classes(), 0.0);
  for (std::size_t c = 0; c < fp.classes(); ++c) {
    double m = fp.frames() ? fp.probs(0, c) : 0.0;
    for (std::size_t t = 1; t < fp.frames(); ++t) m = std::max(m, fp.probs(t, c));
    out[c] = m;
  }
  return out;
}

class Classifier {
 public:
  Classifier(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(init_seed);
    std::size_t cin = 1;
    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
      const auto& b = cfg_.blocks[i];
      std::size_t fan_in = cin * b.kernel * b.kernel;
      std::vector<double> w(b.channels * fan_in);
      double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : w) v = sd * rng.normal();
      add_param("conv" + std::to_string(i) + ".weight", {b.channels, cin, b.kernel, b.kernel},
                std::move(w));
      add_param("conv" + std::to_string(i) + ".bias", {b.channels},
                std::vector<double>(b.channels, 0.0));
      cin = b.channels;
    }
    std::vector<double> hw(cfg_.n_classes * cfg_.embed_dim);
    double sd = std::sqrt(1.0 / static_cast<double>(cfg_.embed_dim));
    for (double& v : hw) v = sd * rng.normal();
    add_param("head.weight", {cfg_.n_classes, cfg_.embed_dim}, std::move(hw));
    add_param("head.bias", {cfg_.n_classes}, std::vector<double>(cfg_.n_classes, 0.0));
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<DiffTensor>& parameters() { return params_; }
  const std::vector<DiffTensor>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  DiffTensor& parameter(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    throw InvalidInput("model has no parameter '" + name + "'");
  }

  /// Input standardization applied to log-mel values before the first conv.
  void set_input_normalization(double mean, double std) {
    if (!(std > 0.0)) throw InvalidSpec("input normalization std must be positive");
    input_mean_ = mean;
    input_std_ = std;
  }
  double input_mean() const { return input_mean_; }
  double input_std() const { return input_std_; }

  void set_trainable(bool on) {
    for (auto& p : params_) p.node()->requires_grad = on;
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Frequency-averaged features [D, T] for a log-mel tensor [T_spec, n_mels].
  DiffTensor features(const DiffTensor& logmel) const {
    if (logmel.rank() != 2 || logmel.dim(1) != cfg_.n_mels)
      throw ShapeError("model expects log-mel [T, " + std::to_string(cfg_.n_mels) + "], got " +
                       grad::to_string(logmel.shape()));
    if (cfg_.output_frames(logmel.dim(0)) == 0)
      throw ShapeError("log-mel with " + std::to_string(logmel.dim(0)) +
                       " frames is too short for the pooling schedule");
    auto x = grad::affine(logmel, 1.0 / input_std_, -input_mean_ / input_std_);
    x = grad::reshape(x, {1, logmel.dim(0), logmel.dim(1)});
    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
      const auto& b = cfg_.blocks[i];
      x = grad::conv2d(x, params_[2 * i], params_[2 * i + 1], {1, b.kernel / 2});
      x = grad::relu(x);
      if (b.pool_time > 1 || b.pool_freq > 1) x = grad::avg_pool2d(x, b.pool_time, b.pool_freq);
    }
    return grad::mean(x, 2);
  }

  /// Pool-then-classify scores [C].
  DiffTensor clip_scores(const DiffTensor& logmel) const {
    auto h = features(logmel);
    auto emb = grad::reshape(grad::max(h, 1), {cfg_.embed_dim, 1});
    auto logits = grad::add(grad::matmul(head_weight(), emb),
                            grad::reshape(head_bias(), {cfg_.n_classes, 1}));
    return grad::reshape(grad::sigmoid(logits), {cfg_.n_classes});
  }

  /// Classify-then-pool per-frame probabilities [C, T].
  DiffTensor frame_scores(const DiffTensor& logmel) const {
    auto h = features(logmel);
    auto t = h.dim(1);
    auto logits = grad::add(
        grad::matmul(head_weight(), h),
        grad::broadcast(grad::reshape(head_bias(), {cfg_.n_classes, 1}), {cfg_.n_classes, t}));
    return grad::sigmoid(logits);
  }

  /// The score this model's head is trained on: clip_scores for the clip
  /// head, temporal max of frame_scores for the framewise head.
  DiffTensor head_scores(const DiffTensor& logmel) const {
    if (cfg_.head == HeadKind::clip) return clip_scores(logmel);
    return grad::max(frame_scores(logmel), 1);
  }

  grad::Checkpoint to_checkpoint() const {
    grad::Checkpoint ck;
    for (std::size_t i = 0; i < params_.size(); ++i)
      ck.arrays.push_back({names_[i], params_[i].shape(), params_[i].value()});
    ck.arrays.push_back({"input_norm", {2}, {input_mean_, input_std_}});
    ck.metadata["model"] = cfg_.to_json();
    return ck;
  }

  static Classifier from_checkpoint(const grad::Checkpoint& ck) {
    Classifier m(ModelConfig::from_json(ck.metadata.at("model")), 0);
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
      const auto& a = ck.at(m.names_[i]);
      if (a.shape != m.params_[i].shape())
        throw ShapeError("checkpoint array '" + a.name + "' has shape " + grad::to_string(a.shape) +
                         ", model expects " + grad::to_string(m.params_[i].shape()));
      m.params_[i].mutable_value() = a.values;
    }
    const auto& norm = ck.at("input_norm");
    m.set_input_normalization(norm.values.at(0), norm.values.at(1));
    return m;
  }

  /// Deep copy of parameter values (graphs are not shared).
  Classifier clone() const {
    Classifier m = *this;
    for (auto& p : m.params_)
      p = grad::tensor(p.shape(), p.value(), p.requires_grad());
    return m;
  }

 private:
  void add_param(std::string name, grad::Shape shape, std::vector<double> values) {
    names_.push_back(std::move(name));
    params_.push_back(grad::tensor(std::move(shape), std::move(values), true));
  }
  const DiffTensor& head_weight() const { return params_[params_.size() - 2]; }
  const DiffTensor& head_bias() const { return params_[params_.size() - 1]; }

  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<DiffTensor> params_;
  double input_mean_ = 0.0;
  double input_std_ = 1.0;
};

inline DiffTensor logmel_tensor(const Matrix& logmel) {
  return grad::tensor({logmel.rows, logmel.cols}, logmel.data);
}

/// Pool-then-classify clip scores for a log-mel matrix.
inline std::vector<double> clip_forward(const Classifier& m, const Matrix& logmel) {
  grad::NoGradGuard ng;
  return m.clip_scores(logmel_tensor(logmel)).value();
}

inline FramewisePrediction framewise_forward(const Classifier& m, const Matrix& logmel) {
  grad::NoGradGuard ng;
  auto p = m.frame_scores(logmel_tensor(logmel));
  const std::size_t c = p.dim(0), t = p.dim(1);
  FramewisePrediction fp{Matrix(t, c), m.config().frame_duration()};
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ti = 0; ti < t; ++ti) fp.probs(ti, ci) = p.value()[ci * t + ti];
  return fp;
}

/// Clip probabilities according to the model's head kind.
inline std::vector<double> predict_clip(const Classifier& m, const Matrix& logmel) {
  if (m.config().head == HeadKind::clip) return clip_forward(m, logmel);
  return clip_from_frames(framewise_forward(m, logmel));
}

}  // namespace igsed::model
