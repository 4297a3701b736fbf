#pragma once

// Thin RAII wrapper over FFTW real transforms of a fixed length.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>

#include "igsed/common.hpp"

namespace igsed::dsp {

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw InvalidInput("FFT length must be positive");
    std::lock_guard lock(planner_mutex());
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), out_, in_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// X_k = sum_n x_n e^{-2 pi i k n / N}, k = 0..N/2.
  void forward(std::span<const double> x, std::span<std::complex<double>> spectrum) {
    std::copy(x.begin(), x.end(), in_);
    fftw_execute(forward_);
    for (std::size_t k = 0; k < bins(); ++k) spectrum[k] = {out_[k][0], out_[k][1]};
  }

  /// y_n = sum_{k=0}^{N-1} Y_k e^{+2 pi i k n / N} for Hermitian Y given by
  /// its first N/2+1 entries (unnormalized, as FFTW defines it).
  void inverse(std::span<const std::complex<double>> spectrum, std::span<double> y) {
    for (std::size_t k = 0; k < bins(); ++k) {
      out_[k][0] = spectrum[k].real();
      out_[k][1] = spectrum[k].imag();
    }
    fftw_execute(inverse_);
    std::copy(in_, in_ + n_, y.begin());
  }

  /// Shared instance per length for the calling thread.
  static RealFft& cached(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<RealFft>> cache;
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealFft>(n);
    return *slot;
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace igsed::dsp
