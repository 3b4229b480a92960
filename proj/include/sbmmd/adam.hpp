#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

#include "sbmmd/error.hpp"

namespace sbmmd {

/// Adam moments and hyperparameters (Kingma & Ba).
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  explicit AdamState(Eigen::Index size, double lr = 1e-3)
      : learning_rate(lr), m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)) {}
};

/// One bias-corrected Adam update of theta in place.
inline void adam_step(AdamState& s, Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  require_dim(theta.size() == grad.size() && grad.size() == s.m.size(), "adam_step: shape mismatch");
  if (!grad.allFinite()) {
    Eigen::Index bad = 0;
    for (; bad < grad.size() && std::isfinite(grad(bad)); ++bad) {
    }
    throw DivergenceError("adam_step: non-finite gradient at coordinate " + std::to_string(bad) + " (step " +
                          std::to_string(s.step + 1) + ")");
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  theta.array() -= s.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.epsilon);
}

}  // namespace sbmmd
