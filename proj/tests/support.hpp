#pragma once

// Finite-difference and random-input helpers shared by the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "igsed/common.hpp"
#include "igsed/grad.hpp"

namespace igsed::testing {

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Values with |v| >= margin, away from relu/max kinks.
inline std::vector<double> away_from_zero(std::size_t n, Rng& rng, double margin = 0.05) {
  std::vector<double> v(n);
  for (double& x : v) {
    double m = rng.uniform(margin, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return v;
}

inline double rel_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Scalar function of one flat input vector.
using ScalarFn = std::function<grad::DiffTensor(const grad::DiffTensor&)>;

inline std::vector<double> analytic_gradient(const ScalarFn& f, const grad::Shape& shape,
                                             const std::vector<double>& x) {
  auto t = grad::tensor(shape, x, true);
  grad::backward(f(t));
  return t.grad();
}

inline double evaluate(const ScalarFn& f, const grad::Shape& shape, const std::vector<double>& x) {
  grad::NoGradGuard ng;
  return f(grad::tensor(shape, x)).item();
}

/// Largest coordinate-wise relative error against central differences.
inline double max_coordinate_error(const ScalarFn& f, const grad::Shape& shape, const std::vector<double>& x,
                                   double h = 1e-5) {
  auto g = analytic_gradient(f, shape, x);
  double worst = 0.0;
  auto xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    double fp = evaluate(f, shape, xp);
    xp[i] = x[i] - h;
    double fm = evaluate(f, shape, xp);
    xp[i] = x[i];
    worst = std::max(worst, rel_error(g[i], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

/// Relative error of the directional derivative along random unit directions.
inline double max_directional_error(const ScalarFn& f, const grad::Shape& shape, const std::vector<double>& x,
                                    int probes, Rng& rng, double h = 1e-5) {
  auto g = analytic_gradient(f, shape, x);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    std::vector<double> d(x.size());
    double norm = 0.0;
    for (double& v : d) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    double analytic = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] /= norm;
      analytic += g[i] * d[i];
    }
    std::vector<double> xp(x), xm(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      xp[i] += h * d[i];
      xm[i] -= h * d[i];
    }
    double numeric = (evaluate(f, shape, xp) - evaluate(f, shape, xm)) / (2.0 * h);
    worst = std::max(worst, rel_error(analytic, numeric));
  }
  return worst;
}

/// Weighted sum with fixed random weights, so every output element matters.
inline grad::DiffTensor weighted_sum(const grad::DiffTensor& y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = grad::tensor(y.shape(), random_values(y.size(), rng, 0.5, 1.5));
  return grad::affine(grad::mean_all(grad::mul(y, w)), static_cast<double>(y.size()));
}

}  // namespace igsed::testing
