#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "igsed/common.hpp"
#include "igsed/grad.hpp"

namespace igsed::grad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one parameter array.
struct AdamMoments {
  std::vector<double> m, v;
};

struct AdamState {
  std::vector<AdamMoments> moments;
  long step = 0;
};

/// One bias-corrected Adam update of `param` in place. `step` is 1-based.
inline void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& mom,
                        long step, const AdamConfig& cfg) {
  if (param.size() != grad.size())
    throw ShapeError("adam: parameter has " + std::to_string(param.size()) + " entries, gradient " +
                     std::to_string(grad.size()));
  if (mom.m.empty()) {
    mom.m.assign(param.size(), 0.0);
    mom.v.assign(param.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * grad[i];
    mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    double mhat = mom.m[i] / c1;
    double vhat = mom.v[i] / c2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Applies Adam to every parameter leaf using its accumulated gradient.
inline void adam_step(std::vector<DiffTensor>& params, AdamState& state, const AdamConfig& cfg) {
  if (state.moments.size() != params.size()) state.moments.resize(params.size());
  ++state.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto g = params[k].grad();
    adam_update(params[k].mutable_value(), g, state.moments[k], state.step, cfg);
  }
}

}  // namespace igsed::grad
