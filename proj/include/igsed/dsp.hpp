#pragma once

// Log-mel frontend: reflect-padded STFT with a periodic Hamming window,
// HTK-style triangular mel filters, log compression with an energy floor.
// The same transform is available as a differentiable graph op so that
// attributions can be taken with respect to the waveform.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "igsed/common.hpp"
#include "igsed/fft.hpp"
#include "igsed/grad.hpp"

namespace igsed::dsp {

struct MelFrontendConfig {
  std::size_t window_len = 256;
  std::size_t hop = 80;
  std::size_t n_mels = 32;
  double fmin = 25.0;
  double fmax = 3500.0;
  double log_floor = 1e-10;

  /// 1024/320/64 mels over 50 Hz-14 kHz, intended for 32 kHz audio.
  static MelFrontendConfig full_scale() { return {1024, 320, 64, 50.0, 14000.0, 1e-10}; }

  void validate(double sample_rate) const {
    if (window_len == 0 || hop == 0 || hop > window_len)
      throw InvalidSpec("frontend: need 0 < hop <= window_len");
    if (n_mels == 0) throw InvalidSpec("frontend: n_mels must be >= 1");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
      throw InvalidSpec("frontend: need 0 <= fmin < fmax <= sample_rate/2");
    if (!(log_floor > 0.0)) throw InvalidSpec("frontend: log_floor must be positive");
  }
};

struct MelSpectrogram {
  Matrix values;                   // T_spec x n_mels log energies
  std::vector<double> frame_times;  // centre time of each spectral frame, seconds
};

inline std::size_t frame_count(std::size_t n_samples, std::size_t hop) {
  return n_samples / hop + 1;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Periodic Hamming window.
inline std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n));
  return w;
}

/// Maps an index into the reflect-padded signal back onto the source.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
  if (len == 1) return 0;
  auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  std::ptrdiff_t m = ((i % period) + period) % period;
  if (m >= static_cast<std::ptrdiff_t>(len)) m = period - m;
  return static_cast<std::size_t>(m);
}

namespace detail {

/// Source index for every (frame, tap) of the centre-padded framing.
inline std::vector<std::size_t> frame_sources(std::size_t len, const MelFrontendConfig& cfg) {
  const std::size_t frames = frame_count(len, cfg.hop);
  const auto pad = static_cast<std::ptrdiff_t>(cfg.window_len / 2);
  std::vector<std::size_t> src(frames * cfg.window_len);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t n = 0; n < cfg.window_len; ++n)
      src[t * cfg.window_len + n] =
          reflect_index(static_cast<std::ptrdiff_t>(t * cfg.hop + n) - pad, len);
  return src;
}

inline void check_samples(std::span<const double> samples, const MelFrontendConfig& cfg) {
  if (samples.size() < cfg.hop)
    throw InvalidInput("stft: " + std::to_string(samples.size()) +
                       " samples is shorter than one hop (" + std::to_string(cfg.hop) + ")");
}

/// Windowed spectra of every frame, T x bins.
inline std::vector<std::complex<double>> frame_spectra(std::span<const double> samples,
                                                       const MelFrontendConfig& cfg,
                                                       const std::vector<std::size_t>& src) {
  auto& fft = RealFft::cached(cfg.window_len);
  const auto window = hamming_window(cfg.window_len);
  const std::size_t frames = src.size() / cfg.window_len;
  const std::size_t bins = fft.bins();
  std::vector<std::complex<double>> spec(frames * bins);
  std::vector<double> buf(cfg.window_len);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < cfg.window_len; ++n)
      buf[n] = window[n] * samples[src[t * cfg.window_len + n]];
    fft.forward(buf, std::span(spec).subspan(t * bins, bins));
  }
  return spec;
}

}  // namespace detail

/// Power spectrogram |STFT|^2, T_spec x (window_len/2 + 1).
inline Matrix stft_power(std::span<const double> samples, const MelFrontendConfig& cfg) {
  detail::check_samples(samples, cfg);
  auto src = detail::frame_sources(samples.size(), cfg);
  auto spec = detail::frame_spectra(samples, cfg, src);
  const std::size_t bins = cfg.window_len / 2 + 1;
  Matrix power(src.size() / cfg.window_len, bins);
  for (std::size_t i = 0; i < spec.size(); ++i) power.data[i] = std::norm(spec[i]);
  return power;
}

/// Triangular HTK mel filters, n_mels x (window_len/2 + 1), unnormalized
/// (peak weight 1 at each centre).
inline Matrix mel_filterbank(const MelFrontendConfig& cfg, double sample_rate) {
  cfg.validate(sample_rate);
  const std::size_t bins = cfg.window_len / 2 + 1;
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) /
                                   static_cast<double>(cfg.n_mels + 1));
  Matrix fb(cfg.n_mels, bins);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      double f = static_cast<double>(k) * sample_rate / static_cast<double>(cfg.window_len);
      double up = (f - lo) / (centre - lo);
      double down = (hi - f) / (hi - centre);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

/// Centre frequencies (Hz) of the mel filters.
inline std::vector<double> mel_centres(const MelFrontendConfig& cfg) {
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> c(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m)
    c[m] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(m + 1) /
                               static_cast<double>(cfg.n_mels + 1));
  return c;
}

/// Log-mel transform bound to a sample rate; owns the filterbank.
class LogMelFrontend {
 public:
  LogMelFrontend(MelFrontendConfig cfg, double sample_rate)
      : cfg_(cfg), sample_rate_(sample_rate), filters_(mel_filterbank(cfg, sample_rate)) {
    filters_t_ = Matrix(filters_.cols, filters_.rows);
    for (std::size_t m = 0; m < filters_.rows; ++m)
      for (std::size_t k = 0; k < filters_.cols; ++k) filters_t_(k, m) = filters_(m, k);
  }

  const MelFrontendConfig& config() const { return cfg_; }
  double sample_rate() const { return sample_rate_; }
  const Matrix& filterbank() const { return filters_; }

  MelSpectrogram compute(std::span<const double> samples) const {
    Matrix power = stft_power(samples, cfg_);
    Matrix mel = project(power);
    for (double& v : mel.data) v = std::log(std::max(v, cfg_.log_floor));
    MelSpectrogram out{std::move(mel), {}};
    out.frame_times.resize(out.values.rows);
    for (std::size_t t = 0; t < out.values.rows; ++t)
      out.frame_times[t] = static_cast<double>(t * cfg_.hop) / sample_rate_;
    return out;
  }

  /// Mel power (before the log) of a power spectrogram.
  Matrix project(const Matrix& power) const {
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Matrix mel(power.rows, cfg_.n_mels);
    Eigen::Map<RowMat>(mel.data.data(), static_cast<Eigen::Index>(mel.rows),
                       static_cast<Eigen::Index>(mel.cols))
        .noalias() = Eigen::Map<const RowMat>(power.data.data(),
                                              static_cast<Eigen::Index>(power.rows),
                                              static_cast<Eigen::Index>(power.cols)) *
                     Eigen::Map<const RowMat>(filters_t_.data.data(),
                                              static_cast<Eigen::Index>(filters_t_.rows),
                                              static_cast<Eigen::Index>(filters_t_.cols));
    return mel;
  }

  /// Differentiable log-mel of a waveform tensor [L] -> [T_spec, n_mels].
  grad::DiffTensor graph(const grad::DiffTensor& waveform) const {
    auto power = stft_power_op(waveform, cfg_);
    auto fb = grad::tensor({filters_t_.rows, filters_t_.cols}, filters_t_.data);
    return grad::log_floor(grad::matmul(power, fb), cfg_.log_floor);
  }

  /// Power-spectrogram op with an FFT-based backward pass.
  static grad::DiffTensor stft_power_op(const grad::DiffTensor& waveform,
                                        const MelFrontendConfig& cfg) {
    if (waveform.rank() != 1)
      throw ShapeError("stft_power: waveform must be rank 1, got " +
                       grad::to_string(waveform.shape()));
    std::span<const double> x = waveform.value();
    detail::check_samples(x, cfg);
    auto src = detail::frame_sources(x.size(), cfg);
    auto spec = detail::frame_spectra(x, cfg, src);
    const std::size_t bins = cfg.window_len / 2 + 1;
    const std::size_t frames = src.size() / cfg.window_len;
    std::vector<double> power(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) power[i] = std::norm(spec[i]);

    return grad::make_op(
        "stft_power", {frames, bins}, std::move(power), {waveform},
        [cfg, bins, frames, src = std::move(src), spec = std::move(spec)](grad::Node& self) {
          // d|X_k|^2/dx_n = 2 Re(X_k e^{+i 2 pi k n / N}) w_n, evaluated with
          // one inverse real FFT per frame.
          auto& fft = RealFft::cached(cfg.window_len);
          const auto window = hamming_window(cfg.window_len);
          const std::size_t n_fft = cfg.window_len;
          auto& gx = self.parents[0]->grad_buffer();
          std::vector<std::complex<double>> z(bins);
          std::vector<double> y(n_fft);
          for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t k = 0; k < bins; ++k) {
              bool self_paired = k == 0 || (n_fft % 2 == 0 && k == n_fft / 2);
              double scale = self_paired ? 2.0 : 1.0;
              z[k] = scale * self.grad[t * bins + k] * spec[t * bins + k];
            }
            fft.inverse(z, y);
            for (std::size_t n = 0; n < n_fft; ++n) gx[src[t * n_fft + n]] += window[n] * y[n];
          }
        });
  }

 private:
  MelFrontendConfig cfg_;
  double sample_rate_;
  Matrix filters_;    // n_mels x bins
  Matrix filters_t_;  // bins x n_mels
};

}  // namespace igsed::dsp
