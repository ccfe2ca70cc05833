#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mmaffect/autodiff/tensor.hpp"
#include "mmaffect/error.hpp"

namespace mmaffect {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamMoments(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/**
 * One bias-corrected Adam update of `param` in place. `step` is the 1-based
 * update count:
 *   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
 *   theta <- theta - lr * (m / (1 - b1^step)) / (sqrt(v / (1 - b2^step)) + eps)
 */
inline void adam_step(std::span<double> param, std::span<const double> grad, AdamMoments& moments, std::uint64_t step,
                      const AdamConfig& cfg) {
  if (grad.size() != param.size() || moments.m.size() != param.size() || moments.v.size() != param.size()) {
    fail(ErrorCode::ShapeMismatch, "adam_step: parameter, gradient and moment sizes differ");
  }
  if (step == 0) fail(ErrorCode::InvalidArgument, "adam_step: step counts from 1");
  const double s = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, s);
  const double c2 = 1.0 - std::pow(cfg.beta2, s);
  for (std::size_t i = 0; i < param.size(); ++i) {
    double& m = moments.m[i];
    double& v = moments.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad[i] * grad[i];
    param[i] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
  }
}

/// Updates a tensor from its accumulated gradient (zero when none was accumulated).
inline void adam_step(ad::Tensor& param, AdamMoments& moments, std::uint64_t step, const AdamConfig& cfg) {
  if (param.has_grad()) {
    adam_step(param.data(), param.grad(), moments, step, cfg);
  } else {
    const std::vector<double> zero(param.size(), 0.0);
    adam_step(param.data(), zero, moments, step, cfg);
  }
}

}  // namespace mmaffect
