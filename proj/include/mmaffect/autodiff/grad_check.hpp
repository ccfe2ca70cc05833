#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "mmaffect/autodiff/graph.hpp"

namespace mmaffect::ad {

struct GradCheckReport {
  /// max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf, floor), over all inputs
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t n_checked = 0;
  bool passed = false;
};

using MultiFunction = std::function<Var(Graph&, std::span<const Var>)>;
using SingleFunction = std::function<Var(Graph&, Var)>;

/**
 * Compares reverse-mode gradients of a scalar function against central
 * differences (f(x + h e_i) - f(x - h e_i)) / 2h for every entry of every
 * input. The error is normalized by the larger infinity norm of the two
 * gradients taken over all inputs, so entries with tiny or structurally
 * zero gradients are judged against the scale of the whole gradient.
 */
inline GradCheckReport grad_check(const MultiFunction& f, std::span<Tensor* const> inputs, double h = 1e-5,
                                  double tol = 1e-4) {
  constexpr double kNormFloor = 1e-8;
  std::vector<bool> saved_flags;
  for (Tensor* t : inputs) {
    saved_flags.push_back(t->requires_grad());
    t->set_requires_grad(true);
    t->zero_grad();
  }

  auto evaluate = [&](bool with_backward) {
    Graph g;
    std::vector<Var> vars;
    for (Tensor* t : inputs) vars.push_back(g.input(*t));
    Var out = f(g, vars);
    if (out.value().size() != 1) fail(ErrorCode::NonScalarLoss, "grad_check needs a scalar function");
    if (with_backward) g.backward(out);
    return out.value()[0];
  };

  evaluate(true);
  GradCheckReport report;
  double norm = kNormFloor;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    Tensor& t = *inputs[n];
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double fp = evaluate(false);
      t[i] = orig - h;
      const double fm = evaluate(false);
      t[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      norm = std::max({norm, std::abs(analytic[i]), std::abs(numeric)});
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic[i] - numeric));
    }
    report.n_checked += t.size();
  }
  report.max_rel_error = report.max_abs_error / norm;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    inputs[n]->zero_grad();
    inputs[n]->set_requires_grad(saved_flags[n]);
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error <= tol;
  return report;
}

inline GradCheckReport grad_check(const SingleFunction& f, Tensor& x, double h = 1e-5, double tol = 1e-4) {
  Tensor* inputs[] = {&x};
  return grad_check([&f](Graph& g, std::span<const Var> v) { return f(g, v[0]); }, inputs, h, tol);
}

}  // namespace mmaffect::ad
