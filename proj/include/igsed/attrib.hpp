#pragma once

// Waveform attributions: Integrated Gradients along the straight path from a
// silent baseline, plus the random and energy reference maps.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igsed/common.hpp"
#include "igsed/dsp.hpp"
#include "igsed/grad.hpp"
#include "igsed/model.hpp"
#include "igsed/scenegen.hpp"

namespace igsed::attrib {

enum class Method { ig, random, energy };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::ig: return "ig";
    case Method::random: return "random";
    case Method::energy: return "energy";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "ig") return Method::ig;
  if (s == "random") return Method::random;
  if (s == "energy") return Method::energy;
  throw InvalidInput("unknown attribution method '" + s + "' (expected ig, random or energy)");
}

struct AttributionRequest {
  std::string clip_id;
  int class_id = -1;  // -1 for class-independent maps
  Method method = Method::ig;
  int steps = 50;
  std::string baseline = "zero_waveform";
  std::uint64_t seed = 0;
};

struct AttributionMap {
  std::vector<double> scores;  // one signed value per waveform sample
  AttributionRequest request;
  double completeness_gap = 0.0;
  double f_input = 0.0;
  double f_baseline = 0.0;

  std::vector<double> magnitudes() const {
    std::vector<double> m(scores.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(scores[i]);
    return m;
  }
};

/// Differentiable scalar function of a waveform tensor.
using WaveformScore = std::function<grad::DiffTensor(const grad::DiffTensor&)>;

/// Midpoint-rule Integrated Gradients with baseline `baseline`:
///   IG_i = (x_i - x'_i) * (1/n) sum_k dF(x' + a_k (x - x'))/dx_i,  a_k = (k - 1/2)/n.
inline AttributionMap integrated_gradients(const WaveformScore& f, std::span<const double> input,
                                           std::span<const double> baseline, int steps) {
  if (steps < 1) throw InvalidInput("integrated_gradients: steps must be >= 1");
  if (input.size() != baseline.size())
    throw ShapeError("integrated_gradients: input and baseline lengths differ");
  const std::size_t n = input.size();
  std::vector<double> avg(n, 0.0), carry(n, 0.0);  // Neumaier-compensated sums
  std::vector<double> point(n);
  for (int k = 1; k <= steps; ++k) {
    const double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < n; ++i) point[i] = baseline[i] + alpha * (input[i] - baseline[i]);
    auto x = grad::tensor({n}, point, true);
    try {
      grad::backward(f(x));
    } catch (const NumericalError& e) {
      throw NumericalError("integrated_gradients: step " + std::to_string(k) + ": " + e.what());
    }
    auto g = x.grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i]))
        throw NumericalError("integrated_gradients: non-finite gradient at step " +
                             std::to_string(k) + ", sample " + std::to_string(i));
      const double t = avg[i] + g[i];
      carry[i] += std::abs(avg[i]) >= std::abs(g[i]) ? (avg[i] - t) + g[i] : (g[i] - t) + avg[i];
      avg[i] = t;
    }
  }
  AttributionMap out;
  out.scores.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.scores[i] = (input[i] - baseline[i]) * ((avg[i] + carry[i]) / static_cast<double>(steps));
    total += out.scores[i];
  }
  {
    grad::NoGradGuard ng;
    out.f_input = f(grad::tensor({n}, {input.begin(), input.end()})).item();
    out.f_baseline = f(grad::tensor({n}, {baseline.begin(), baseline.end()})).item();
  }
  out.completeness_gap = std::abs(total - (out.f_input - out.f_baseline));
  out.request.steps = steps;
  return out;
}

/// A clip-level classifier composed with the differentiable frontend; F is
/// the sigmoid probability of one class.
class ClassScore {
 public:
  ClassScore(const model::Classifier& m, const dsp::LogMelFrontend& fe) : model_(m), frontend_(fe) {}

  grad::DiffTensor operator()(const grad::DiffTensor& waveform, int class_id) const {
    auto scores = model_.head_scores(frontend_.graph(waveform));
    return grad::slice(scores, 0, static_cast<std::size_t>(class_id),
                       static_cast<std::size_t>(class_id) + 1);
  }

  std::vector<double> probabilities(std::span<const double> samples) const {
    return model::predict_clip(model_, frontend_.compute(samples).values);
  }

 private:
  const model::Classifier& model_;
  const dsp::LogMelFrontend& frontend_;
};

/// IG for one (clip, class); rejects classes at or below the 0.5 gate.
inline AttributionMap integrated_gradients(const model::Classifier& m,
                                           const dsp::LogMelFrontend& fe,
                                           const scene::AudioClip& clip, int class_id, int steps,
                                           double gate = 0.5) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= m.config().n_classes)
    throw InvalidInput("class id " + std::to_string(class_id) + " out of range");
  // Frozen copy: only the waveform needs gradients.
  auto frozen = m.clone();
  frozen.set_trainable(false);

  ClassScore score(frozen, fe);
  auto p = score.probabilities(clip.samples);
  if (!(p[static_cast<std::size_t>(class_id)] > gate))
    throw GateRejected("class " + std::to_string(class_id) + " on clip " + clip.clip_id +
                       " has probability " + std::to_string(p[static_cast<std::size_t>(class_id)]) +
                       " <= " + std::to_string(gate));
  std::vector<double> zero(clip.samples.size(), 0.0);
  auto map = integrated_gradients(
      [&](const grad::DiffTensor& x) { return score(x, class_id); }, clip.samples, zero, steps);
  map.request.clip_id = clip.clip_id;
  map.request.class_id = class_id;
  map.request.method = Method::ig;
  return map;
}

/// I.i.d. uniform [0,1) magnitudes.
inline AttributionMap random_attribution(const scene::AudioClip& clip, std::uint64_t seed) {
  AttributionMap m;
  m.scores.resize(clip.samples.size());
  Rng rng(seed);
  for (double& v : m.scores) v = rng.uniform();
  m.request.clip_id = clip.clip_id;
  m.request.method = Method::random;
  m.request.steps = 0;
  m.request.seed = seed;
  return m;
}

/// |sample|, independent of class.
inline AttributionMap energy_attribution(const scene::AudioClip& clip) {
  AttributionMap m;
  m.scores.resize(clip.samples.size());
  for (std::size_t i = 0; i < m.scores.size(); ++i) m.scores[i] = std::abs(clip.samples[i]);
  m.request.clip_id = clip.clip_id;
  m.request.method = Method::energy;
  m.request.steps = 0;
  return m;
}

// ---------------------------------------------------------------------------
// Dumps: `<stem>.bin` float64 scores + `<stem>.json` sidecar.

inline nlohmann::json sidecar_json(const AttributionMap& m) {
  return {{"clip_id", m.request.clip_id},
          {"class_id", m.request.class_id},
          {"method", to_string(m.request.method)},
          {"steps", m.request.steps},
          {"baseline", m.request.baseline},
          {"seed", m.request.seed},
          {"n_samples", m.scores.size()},
          {"completeness_gap", m.completeness_gap},
          {"F_x", m.f_input},
          {"F_baseline", m.f_baseline}};
}

inline void save_attribution(const std::filesystem::path& stem, const AttributionMap& m) {
  auto bin = std::filesystem::path(stem.string() + ".bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError("cannot write " + bin.string());
  out.write(reinterpret_cast<const char*>(m.scores.data()),
            static_cast<std::streamsize>(m.scores.size() * sizeof(double)));
  auto side = std::filesystem::path(stem.string() + ".json");
  std::ofstream js(side);
  if (!js) throw IoError("cannot write " + side.string());
  js << sidecar_json(m).dump(2) << '\n';
}

inline AttributionMap load_attribution(const std::filesystem::path& stem) {
  auto side = std::filesystem::path(stem.string() + ".json");
  std::ifstream js(side);
  if (!js) throw IoError("cannot read " + side.string());
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed attribution sidecar " + side.string() + ": " + e.what());
  }
  AttributionMap m;
  m.request.clip_id = j.at("clip_id").get<std::string>();
  m.request.class_id = j.at("class_id").get<int>();
  m.request.method = method_from_string(j.at("method").get<std::string>());
  m.request.steps = j.at("steps").get<int>();
  m.request.baseline = j.at("baseline").get<std::string>();
  m.request.seed = j.at("seed").get<std::uint64_t>();
  m.completeness_gap = j.at("completeness_gap").get<double>();
  m.f_input = j.at("F_x").get<double>();
  m.f_baseline = j.at("F_baseline").get<double>();
  auto n = j.at("n_samples").get<std::size_t>();
  auto bin = std::filesystem::path(stem.string() + ".bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot read " + bin.string());
  m.scores.resize(n);
  in.read(reinterpret_cast<char*>(m.scores.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("truncated attribution data in " + bin.string());
  return m;
}

}  // namespace igsed::attrib
