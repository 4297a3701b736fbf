#pragma once

// Synthetic polyphonic scenes with exact ground truth. Foreground events come
// from ten parametric sound classes (five stationary, five transient) mixed
// over a low-passed noise floor at a per-event SNR.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "igsed/common.hpp"

namespace igsed::scene {

enum class EventKind { stationary, transient };

enum class Generator {
  band_noise,
  harmonic_drone,
  am_noise,
  low_rumble,
  narrowband_hiss,
  click_train,
  tone_bursts,
  chirp_sequence,
  impulse_pairs,
  warble,
};

inline const char* to_string(EventKind k) {
  return k == EventKind::stationary ? "stationary" : "transient";
}

inline const char* to_string(Generator g) {
  switch (g) {
    case Generator::band_noise: return "band_noise";
    case Generator::harmonic_drone: return "harmonic_drone";
    case Generator::am_noise: return "am_noise";
    case Generator::low_rumble: return "low_rumble";
    case Generator::narrowband_hiss: return "narrowband_hiss";
    case Generator::click_train: return "click_train";
    case Generator::tone_bursts: return "tone_bursts";
    case Generator::chirp_sequence: return "chirp_sequence";
    case Generator::impulse_pairs: return "impulse_pairs";
    case Generator::warble: return "warble";
  }
  return "unknown";
}

struct SynthParams {
  Generator generator = Generator::band_noise;
  double carrier_hz = 1000.0;    // centre / fundamental / start frequency
  double bandwidth_hz = 400.0;   // noise bandwidth or FM depth
  int harmonics = 1;
  double mod_rate_hz = 0.0;      // AM rate or burst repetition rate
  double decay_s = 0.02;         // burst envelope decay constant
};

struct EventClassDef {
  int class_id = 0;
  std::string name;
  EventKind kind = EventKind::stationary;
  SynthParams params;
  double min_duration = 0.25;
  double max_duration = 1.0;

  void validate() const {
    if (!(min_duration >= 0.25 && max_duration <= 4.2 && min_duration <= max_duration))
      throw InvalidSpec("class '" + name + "': duration range must lie within [0.25, 4.2] s");
  }
};

using Registry = std::vector<EventClassDef>;

/// Ten classes; durations sized for 2 s desk clips.
inline Registry default_registry() {
  using G = Generator;
  using K = EventKind;
  Registry r{
      {0, "band_noise", K::stationary, {G::band_noise, 1200.0, 500.0, 1, 0.0, 0.0}, 0.4, 1.4},
      {1, "harmonic_drone", K::stationary, {G::harmonic_drone, 220.0, 0.0, 6, 0.0, 0.0}, 0.4, 1.4},
      {2, "am_noise", K::stationary, {G::am_noise, 700.0, 900.0, 1, 25.0, 0.0}, 0.4, 1.4},
      {3, "low_rumble", K::stationary, {G::low_rumble, 55.0, 250.0, 8, 0.0, 0.0}, 0.4, 1.4},
      {4, "narrowband_hiss", K::stationary, {G::narrowband_hiss, 2800.0, 500.0, 1, 0.0, 0.0}, 0.4, 1.4},
      {5, "click_train", K::transient, {G::click_train, 2000.0, 0.0, 1, 8.0, 0.0015}, 0.25, 1.2},
      {6, "tone_bursts", K::transient, {G::tone_bursts, 1000.0, 0.0, 1, 4.0, 0.025}, 0.25, 1.2},
      {7, "chirp_sequence", K::transient, {G::chirp_sequence, 500.0, 0.0, 1, 5.0, 0.06}, 0.25, 1.2},
      {8, "impulse_pairs", K::transient, {G::impulse_pairs, 1600.0, 0.0, 1, 3.0, 0.004}, 0.25, 1.2},
      {9, "warble", K::transient, {G::warble, 1500.0, 150.0, 1, 4.0, 0.08}, 0.25, 1.2},
  };
  return r;
}

inline void validate_registry(const Registry& reg) {
  if (reg.empty()) throw InvalidSpec("registry has no classes");
  bool has_stationary = false, has_transient = false;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    reg[i].validate();
    if (reg[i].class_id != static_cast<int>(i))
      throw InvalidSpec("registry class ids must be 0..C-1 in order");
    (reg[i].kind == EventKind::stationary ? has_stationary : has_transient) = true;
  }
  if (!has_stationary || !has_transient)
    throw InvalidSpec("registry needs both stationary and transient classes");
}

/// Foreground parameter pools. Training clips draw from `train`, validation
/// and test clips from `eval`; the two never share a variant seed.
enum class Pool { train, eval };

inline const char* to_string(Pool p) { return p == Pool::train ? "train" : "eval"; }

inline std::uint64_t variant_seed(Pool pool, int class_id, int variant) {
  constexpr std::uint64_t kPoolSalt[] = {0x7472616e2d706f6fULL, 0x6576616c2d706f6fULL};
  return derive_seed(kPoolSalt[static_cast<int>(pool)], static_cast<std::uint64_t>(class_id),
                     static_cast<std::uint64_t>(variant));
}

/// Perturbs a class's synthesis parameters; stands in for distinct source
/// recordings of the same class.
inline EventClassDef make_variant(const EventClassDef& base, std::uint64_t seed) {
  Rng rng(seed);
  EventClassDef d = base;
  d.params.carrier_hz *= rng.uniform(0.9, 1.1);
  d.params.bandwidth_hz *= rng.uniform(0.9, 1.1);
  d.params.mod_rate_hz *= rng.uniform(0.85, 1.15);
  d.params.decay_s *= rng.uniform(0.85, 1.15);
  return d;
}

// ---------------------------------------------------------------------------
// Event synthesis

namespace detail {

// RBJ cookbook biquad, direct form I.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad bandpass(double fc, double q, double sr) {
    double w = 2.0 * std::numbers::pi * fc / sr;
    double alpha = std::sin(w) / (2.0 * q);
    double a0 = 1.0 + alpha;
    return {alpha / a0, 0.0, -alpha / a0, -2.0 * std::cos(w) / a0, (1.0 - alpha) / a0};
  }
  static Biquad lowpass(double fc, double q, double sr) {
    double w = 2.0 * std::numbers::pi * fc / sr;
    double alpha = std::sin(w) / (2.0 * q);
    double c = std::cos(w);
    double a0 = 1.0 + alpha;
    return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0, -2.0 * c / a0,
            (1.0 - alpha) / a0};
  }
  double operator()(double x) {
    double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

inline std::vector<double> white(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Filtered noise with the filter's transient discarded.
inline std::vector<double> band_noise(std::size_t n, double fc, double bw, double sr, Rng& rng) {
  double q = std::max(fc / std::max(bw, 1.0), 0.3);
  auto f1 = Biquad::bandpass(fc, q, sr);
  auto f2 = Biquad::bandpass(fc, q, sr);
  std::size_t warm = static_cast<std::size_t>(0.05 * sr);
  auto w = white(n + warm, rng);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n + warm; ++i) {
    double y = f2(f1(w[i]));
    if (i >= warm) out[i - warm] = y;
  }
  return out;
}

inline std::vector<double> low_noise(std::size_t n, double fc, double sr, Rng& rng) {
  auto f1 = Biquad::lowpass(fc, 0.707, sr);
  std::size_t warm = static_cast<std::size_t>(0.05 * sr);
  auto w = white(n + warm, rng);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n + warm; ++i) {
    double y = f1(w[i]);
    if (i >= warm) out[i - warm] = y;
  }
  return out;
}

inline void normalize_rms(std::vector<double>& v) {
  double r = rms(v);
  if (r > 0.0)
    for (double& x : v) x /= r;
}

inline void fade_edges(std::vector<double>& v, double sr, double fade_s = 0.005) {
  std::size_t n = std::min(v.size() / 2, static_cast<std::size_t>(fade_s * sr));
  for (std::size_t i = 0; i < n; ++i) {
    double g = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    v[i] *= g;
    v[v.size() - 1 - i] *= g;
  }
}

// Burst start times: the first burst is at 0, later ones jittered around the
// nominal period.
inline std::vector<double> burst_times(double duration, double rate, Rng& rng) {
  std::vector<double> t{0.0};
  double period = 1.0 / rate;
  while (true) {
    double next = t.back() + period * rng.uniform(0.85, 1.15);
    if (next >= duration) break;
    t.push_back(next);
  }
  return t;
}

inline std::vector<double> harmonic_stack(std::size_t n, double f0, int harmonics, double sr,
                                          Rng& rng) {
  std::vector<double> v(n, 0.0);
  for (int h = 1; h <= harmonics; ++h) {
    double f = f0 * h;
    if (f >= sr / 2.0) break;
    double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i)
      v[i] += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / sr + phase) / h;
  }
  return v;
}

}  // namespace detail

/// Renders one event of exactly round(duration * sample_rate) samples with
/// unit RMS. Deterministic in (def, duration, seed, sample_rate).
inline std::vector<double> synthesize_event(const EventClassDef& def, double duration,
                                            std::uint64_t seed, double sample_rate) {
  constexpr double kTol = 1e-9;
  if (!(duration >= def.min_duration - kTol && duration <= def.max_duration + kTol))
    throw InvalidSpec("event duration " + std::to_string(duration) + " s outside [" +
                      std::to_string(def.min_duration) + ", " + std::to_string(def.max_duration) +
                      "] for class '" + def.name + "'");
  const double sr = sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(duration * sr));
  const auto& p = def.params;
  Rng rng(seed);
  std::vector<double> v(n, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;

  // Adds `burst(t)` for t in [0, len) at each burst start.
  auto place_bursts = [&](double len_s, auto&& burst) {
    for (double t0 : detail::burst_times(duration, p.mod_rate_hz, rng)) {
      auto start = static_cast<std::size_t>(std::llround(t0 * sr));
      auto len = static_cast<std::size_t>(len_s * sr);
      for (std::size_t i = 0; i < len && start + i < n; ++i)
        v[start + i] += burst(static_cast<double>(i) / sr);
    }
  };

  switch (p.generator) {
    case Generator::band_noise:
    case Generator::narrowband_hiss:
      v = detail::band_noise(n, p.carrier_hz, p.bandwidth_hz, sr, rng);
      break;
    case Generator::harmonic_drone:
      v = detail::harmonic_stack(n, p.carrier_hz, p.harmonics, sr, rng);
      break;
    case Generator::am_noise: {
      v = detail::band_noise(n, p.carrier_hz, p.bandwidth_hz, sr, rng);
      double phase = rng.uniform(0.0, two_pi);
      for (std::size_t i = 0; i < n; ++i)
        v[i] *= 1.0 + 0.8 * std::sin(two_pi * p.mod_rate_hz * static_cast<double>(i) / sr + phase);
      break;
    }
    case Generator::low_rumble: {
      v = detail::harmonic_stack(n, p.carrier_hz, p.harmonics, sr, rng);
      auto noise = detail::low_noise(n, p.bandwidth_hz, sr, rng);
      detail::normalize_rms(noise);
      detail::normalize_rms(v);
      for (std::size_t i = 0; i < n; ++i) v[i] += 0.5 * noise[i];
      break;
    }
    case Generator::click_train: {
      auto noise = detail::white(n + static_cast<std::size_t>(0.02 * sr), rng);
      std::size_t k = 0;
      place_bursts(10.0 * p.decay_s, [&](double t) { return noise[k++ % noise.size()] * std::exp(-t / p.decay_s); });
      break;
    }
    case Generator::tone_bursts: {
      double f = p.carrier_hz;
      place_bursts(0.15, [&](double t) { return std::sin(two_pi * f * t) * std::exp(-t / p.decay_s); });
      break;
    }
    case Generator::chirp_sequence: {
      double f0 = p.carrier_hz, len = p.decay_s;
      place_bursts(len, [&](double t) {
        double env = std::sin(std::numbers::pi * t / len);
        double phase = two_pi * (f0 * t + 0.5 * (f0 / len) * t * t);  // f0 -> 2 f0
        return env * env * std::sin(phase);
      });
      break;
    }
    case Generator::impulse_pairs: {
      double f = p.carrier_hz, gap = 0.025;
      place_bursts(gap + 8.0 * p.decay_s, [&](double t) {
        double a = std::sin(two_pi * f * t) * std::exp(-t / p.decay_s);
        double t2 = t - gap;
        double b = t2 >= 0.0 ? std::sin(two_pi * f * t2) * std::exp(-t2 / p.decay_s) : 0.0;
        return a + b;
      });
      break;
    }
    case Generator::warble: {
      double fc = p.carrier_hz, depth = p.bandwidth_hz, len = p.decay_s;
      place_bursts(len, [&](double t) {
        double env = std::sin(std::numbers::pi * t / len);
        double phase = two_pi * fc * t - depth / 30.0 * std::cos(two_pi * 30.0 * t);
        return env * env * std::sin(phase);
      });
      break;
    }
  }
  if (def.kind == EventKind::stationary) detail::fade_edges(v, sr);
  detail::normalize_rms(v);
  return v;
}

// ---------------------------------------------------------------------------
// Scenes

struct EventAnnotation {
  int class_id = 0;
  double onset = 0.0;   // seconds, inclusive
  double offset = 0.0;  // seconds, exclusive
  double snr_db = 0.0;
};

/// True iff no instant is covered by more than `max_polyphony` events, with
/// events treated as half-open [onset, offset).
inline bool reject_overlap(std::vector<EventAnnotation> events, int max_polyphony) {
  // Sweep line; at equal times ends are processed before starts.
  std::vector<std::pair<double, int>> edges;
  edges.reserve(events.size() * 2);
  for (const auto& e : events) {
    if (!(e.offset > e.onset)) continue;
    edges.emplace_back(e.onset, +1);
    edges.emplace_back(e.offset, -1);
  }
  std::sort(edges.begin(), edges.end());
  int active = 0;
  for (auto [t, d] : edges) {
    active += d;
    if (active > max_polyphony) return false;
  }
  return true;
}

struct AudioClip {
  std::vector<double> samples;
  double sample_rate = 8000.0;
  std::string clip_id;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Fully specified event placement (used both for sampled and forced events).
struct EventPlacement {
  int class_id = 0;
  int variant = 0;
  std::size_t onset_sample = 0;
  std::size_t length = 0;
  double snr_db = 20.0;
};

struct SceneSpec {
  double clip_duration = 2.0;
  double sample_rate = 8000.0;
  int n_events = 1;
  double snr_low_db = 15.0;
  double snr_high_db = 25.0;
  double background_db = -55.0;
  Pool pool = Pool::train;
  int variants_per_class = 8;
  std::uint64_t seed = 0;
  /// When non-empty, replaces random event sampling (n_events is ignored).
  std::vector<EventPlacement> forced_events;
  bool keep_stems = false;

  std::size_t n_samples() const {
    return static_cast<std::size_t>(std::llround(clip_duration * sample_rate));
  }

  void validate(const Registry& reg) const {
    if (!(sample_rate > 0.0 && clip_duration > 0.0))
      throw InvalidSpec("scene: clip_duration and sample_rate must be positive");
    if (n_events < 0 || n_events > 3) throw InvalidSpec("scene: n_events must be in 0..3");
    if (snr_low_db > snr_high_db) throw InvalidSpec("scene: snr range is reversed");
    for (const auto& d : reg)
      if (d.max_duration >= clip_duration)
        throw InvalidSpec("scene: clip_duration must exceed the longest event (" +
                          std::to_string(d.max_duration) + " s)");
  }
};

struct Scene {
  AudioClip clip;
  std::vector<EventAnnotation> events;
  std::vector<EventPlacement> placements;
  double normalization_scale = 1.0;
  // Only filled when SceneSpec::keep_stems is set (after normalization).
  std::vector<double> background;
  std::vector<std::vector<double>> foregrounds;
};

/// Random placements for a scene; cheap, so polyphony can be checked before
/// any audio is rendered.
inline std::vector<EventPlacement> sample_placements(const SceneSpec& spec, const Registry& reg) {
  if (!spec.forced_events.empty()) return spec.forced_events;
  Rng rng(derive_seed(spec.seed, 0x6576656e7473ULL));
  const std::size_t n_total = spec.n_samples();
  std::vector<EventPlacement> out;
  for (int i = 0; i < spec.n_events; ++i) {
    EventPlacement p;
    p.class_id = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(reg.size()) - 1));
    p.variant = static_cast<int>(rng.uniform_int(0, spec.variants_per_class - 1));
    const auto& def = reg[static_cast<std::size_t>(p.class_id)];
    auto lo = static_cast<std::size_t>(std::ceil(def.min_duration * spec.sample_rate));
    auto hi = static_cast<std::size_t>(std::floor(def.max_duration * spec.sample_rate));
    p.length = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
    p.onset_sample = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(n_total - p.length)));
    p.snr_db = rng.uniform(spec.snr_low_db, spec.snr_high_db);
    out.push_back(p);
  }
  return out;
}

inline std::vector<EventAnnotation> annotate(const std::vector<EventPlacement>& placements,
                                             double sample_rate) {
  std::vector<EventAnnotation> ev;
  for (const auto& p : placements)
    ev.push_back({p.class_id, static_cast<double>(p.onset_sample) / sample_rate,
                  static_cast<double>(p.onset_sample + p.length) / sample_rate, p.snr_db});
  return ev;
}

inline std::vector<double> render_background(const SceneSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0x6267ULL));
  const std::size_t n = spec.n_samples();
  std::vector<double> bg(n);
  // Gentle one-pole low-pass over white noise.
  double y = 0.0;
  for (std::size_t i = 0; i < n + 64; ++i) {
    y = 0.6 * y + 0.4 * rng.normal();
    if (i >= 64) bg[i - 64] = y;
  }
  detail::normalize_rms(bg);
  const double level = std::pow(10.0, spec.background_db / 20.0);
  for (double& v : bg) v *= level;
  return bg;
}

/// Renders placements over the background. Samples are rounded to float32
/// precision so clips survive a float WAV round trip bit-exactly.
inline Scene render_scene(const SceneSpec& spec, const Registry& reg,
                          const std::vector<EventPlacement>& placements) {
  const std::size_t n = spec.n_samples();
  Scene scene;
  scene.placements = placements;
  scene.events = annotate(placements, spec.sample_rate);
  auto bg = render_background(spec);
  const double bg_rms = std::pow(10.0, spec.background_db / 20.0);
  std::vector<double> mix = bg;
  for (std::size_t i = 0; i < placements.size(); ++i) {
    const auto& p = placements[i];
    if (p.class_id < 0 || static_cast<std::size_t>(p.class_id) >= reg.size())
      throw InvalidSpec("scene: unknown class id " + std::to_string(p.class_id));
    if (p.onset_sample + p.length > n) throw InvalidSpec("scene: event runs past clip end");
    const auto& base = reg[static_cast<std::size_t>(p.class_id)];
    auto def = make_variant(base, variant_seed(spec.pool, p.class_id, p.variant));
    auto ev = synthesize_event(def, static_cast<double>(p.length) / spec.sample_rate,
                               derive_seed(spec.seed, 0x6576ULL, i), spec.sample_rate);
    const double gain = bg_rms * std::pow(10.0, p.snr_db / 20.0);
    std::vector<double> stem;
    if (spec.keep_stems) stem.assign(n, 0.0);
    for (std::size_t k = 0; k < p.length; ++k) {
      mix[p.onset_sample + k] += gain * ev[k];
      if (spec.keep_stems) stem[p.onset_sample + k] = gain * ev[k];
    }
    if (spec.keep_stems) scene.foregrounds.push_back(std::move(stem));
  }
  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  scene.normalization_scale = peak > 1.0 ? 1.0 / peak : 1.0;
  for (double& v : mix) v = static_cast<double>(static_cast<float>(v * scene.normalization_scale));
  if (spec.keep_stems) {
    for (double& v : bg) v *= scene.normalization_scale;
    for (auto& s : scene.foregrounds)
      for (double& v : s) v *= scene.normalization_scale;
    scene.background = std::move(bg);
  }
  scene.clip.samples = std::move(mix);
  scene.clip.sample_rate = spec.sample_rate;
  return scene;
}

inline Scene synthesize_scene(const SceneSpec& spec, const Registry& reg) {
  validate_registry(reg);
  spec.validate(reg);
  return render_scene(spec, reg, sample_placements(spec, reg));
}

/// Largest number of simultaneously active events (half-open intervals).
inline int max_polyphony(const std::vector<EventAnnotation>& events) {
  for (int k = 0;; ++k)
    if (reject_overlap(events, k)) return k;
}

}  // namespace igsed::scene
