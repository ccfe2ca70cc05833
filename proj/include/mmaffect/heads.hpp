#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mmaffect/affine.hpp"
#include "mmaffect/encoder.hpp"

namespace mmaffect {

/// Probability clamp used by the AU loss.
inline constexpr double kProbEpsilon = 1e-7;

/**
 * Output layer y = W t + b. The TEMMA path inserts a ReLU hidden layer with
 * dropout before W. ERI heads first average the temporal feature over
 * frames, producing one 1 x 7 prediction per sequence.
 */
struct HeadParams {
  Task task = Task::VA;
  std::optional<AffineParams> hidden;
  Tensor weight;  // [d_t or hidden, out_dim]
  Tensor bias;    // [out_dim]

  std::size_t out_dim() const { return weight.dim(1); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    if (hidden) hidden->for_each(prefix + ".hidden", f);
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

inline HeadParams make_head_params(Task task, std::size_t d_t, CounterRng& rng, std::size_t hidden_units = 0) {
  HeadParams p;
  p.task = task;
  std::size_t width = d_t;
  if (hidden_units > 0) {
    p.hidden = make_affine_params(d_t, hidden_units, rng);
    width = hidden_units;
  }
  p.weight = fan_in_uniform({width, output_dim(task)}, width, rng);
  p.bias = trainable({output_dim(task)});
  return p;
}

/// Raw head output: [..., T, out_dim] for frame tasks, [..., 1, out_dim] for ERI.
inline Var output_layer(Graph& g, Var t, HeadParams& p, const ForwardContext& ctx = {}) {
  if (t.shape().size() < 2) fail(ErrorCode::ShapeMismatch, "temporal feature must be at least [T, d]");
  Var x = t;
  if (p.task == Task::ERI) {
    ad::Shape pooled = x.shape();
    pooled[pooled.size() - 2] = 1;
    x = ad::reshape(ad::mean_axis(x, x.shape().size() - 2), pooled);
  }
  if (p.hidden) {
    if (x.shape().back() != p.hidden->in_dim()) {
      fail(ErrorCode::ShapeMismatch, "head input width " + std::to_string(x.shape().back()) + " != " +
                                         std::to_string(p.hidden->in_dim()));
    }
    x = ad::relu(ad::add(ad::matmul(x, g.input(p.hidden->weight)), g.input(p.hidden->bias)));
    x = ctx.maybe_dropout(x);
  }
  if (x.shape().back() != p.weight.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "head input width " + std::to_string(x.shape().back()) + " != " +
                                       std::to_string(p.weight.dim(0)));
  }
  return ad::add(ad::matmul(x, g.input(p.weight)), g.input(p.bias));
}

/// Inference-time mapping of raw outputs: VA clamped to [-1, 1], AU and ERI
/// through the logistic, Expr left as logits.
inline Tensor finalize_predictions(Task task, Tensor raw) {
  for (double& v : raw.data()) {
    switch (task) {
      case Task::VA: v = std::clamp(v, -1.0, 1.0); break;
      case Task::AU:
      case Task::ERI: v = ad::logistic(v); break;
      case Task::Expr: break;
    }
  }
  return raw;
}

namespace detail {

inline std::size_t rows_of(const Tensor& t, std::size_t width, const char* what) {
  if (t.rank() == 0 || t.shape().back() != width) {
    fail(ErrorCode::ShapeMismatch, std::string(what) + " expects last axis " + std::to_string(width) + ", got " +
                                       ad::shape_string(t.shape()));
  }
  return t.size() / width;
}

}  // namespace detail

/// Mean squared error over valid frames, averaged over valence and arousal.
inline Var mse_va(Graph& g, Var pred, const Tensor& target, std::span<const std::uint8_t> mask) {
  const std::size_t rows = detail::rows_of(pred.value(), kVaDims, "mse_va");
  if (target.size() != pred.value().size() || mask.size() != rows) {
    fail(ErrorCode::ShapeMismatch, "mse_va target/mask do not match predictions");
  }
  std::size_t n_valid = 0;
  double total = 0.0;
  auto p = pred.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++n_valid;
    for (std::size_t d = 0; d < kVaDims; ++d) {
      const double e = p[r * kVaDims + d] - target[r * kVaDims + d];
      total += e * e;
    }
  }
  if (n_valid == 0) fail(ErrorCode::NoValidFrames, "mse_va: every frame is masked");
  const double norm = 1.0 / static_cast<double>(n_valid * kVaDims);
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return g.record("mse_va", Tensor::scalar(total * norm), {pred},
                  [pred, target, keep = std::move(keep), rows, norm](Graph& g, std::span<const double> dy,
                                                                     const Tensor&) {
    auto dp = g.adjoint(pred);
    auto p = g.value(pred).data();
    for (std::size_t r = 0; r < rows; ++r) {
      if (!keep[r]) continue;
      for (std::size_t d = 0; d < kVaDims; ++d) {
        const std::size_t i = r * kVaDims + d;
        dp[i] += dy[0] * 2.0 * norm * (p[i] - target[i]);
      }
    }
  });
}

/// Cross entropy of 8-way logits, averaged over frames whose label is not -1.
inline Var ce_expr(Graph& g, Var logits, std::span<const int> labels) {
  const std::size_t rows = detail::rows_of(logits.value(), kExprClasses, "ce_expr");
  if (labels.size() != rows) fail(ErrorCode::ShapeMismatch, "ce_expr label count does not match frames");
  auto z = logits.value().data();
  std::vector<double> probs(rows * kExprClasses, 0.0);
  std::size_t n_valid = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y == kInvalidLabel) continue;
    if (y < 0 || y >= static_cast<int>(kExprClasses)) {
      fail(ErrorCode::BadLabels, "expression label " + std::to_string(y) + " outside 0..7");
    }
    ++n_valid;
    const double* row = z.data() + r * kExprClasses;
    const double mx = *std::max_element(row, row + kExprClasses);
    double s = 0.0;
    for (std::size_t c = 0; c < kExprClasses; ++c) s += std::exp(row[c] - mx);
    const double log_norm = mx + std::log(s);
    for (std::size_t c = 0; c < kExprClasses; ++c) probs[r * kExprClasses + c] = std::exp(row[c] - log_norm);
    total += log_norm - row[y];
  }
  if (n_valid == 0) fail(ErrorCode::NoValidFrames, "ce_expr: every frame is masked");
  const double norm = 1.0 / static_cast<double>(n_valid);
  std::vector<int> ys(labels.begin(), labels.end());
  return g.record("ce_expr", Tensor::scalar(total * norm), {logits},
                  [logits, probs = std::move(probs), ys = std::move(ys), rows, norm](
                      Graph& g, std::span<const double> dy, const Tensor&) {
    auto dz = g.adjoint(logits);
    for (std::size_t r = 0; r < rows; ++r) {
      if (ys[r] == kInvalidLabel) continue;
      for (std::size_t c = 0; c < kExprClasses; ++c) {
        const double onehot = static_cast<int>(c) == ys[r] ? 1.0 : 0.0;
        dz[r * kExprClasses + c] += dy[0] * norm * (probs[r * kExprClasses + c] - onehot);
      }
    }
  });
}

/// Per-AU loss weights derived from training-set occurrence rates.
struct AUWeights {
  std::vector<double> values;
};

/// w_i = (1 / r_i) / sum_j (1 / r_j) * K for K occurrence rates r.
inline AUWeights weights_from_rates(std::span<const double> rates) {
  AUWeights w;
  double inv_total = 0.0;
  for (double r : rates) {
    if (!(r > 0.0)) fail(ErrorCode::ZeroOccurrence, "an action unit never occurs");
    inv_total += 1.0 / r;
  }
  for (double r : rates) w.values.push_back((1.0 / r) / inv_total * static_cast<double>(rates.size()));
  return w;
}

/// Occurrence rate of each AU over frames without a -1 entry, then inverse-rate weights.
inline AUWeights compute_au_weights(std::span<const std::array<int, kAuCount>> frames) {
  std::array<std::size_t, kAuCount> positives{};
  std::size_t n_valid = 0;
  for (const auto& f : frames) {
    if (std::any_of(f.begin(), f.end(), [](int v) { return v == kInvalidLabel; })) continue;
    ++n_valid;
    for (std::size_t i = 0; i < kAuCount; ++i) positives[i] += f[i] == 1 ? 1 : 0;
  }
  if (n_valid == 0) fail(ErrorCode::NoValidFrames, "no annotated AU frames");
  std::array<double, kAuCount> rates{};
  for (std::size_t i = 0; i < kAuCount; ++i) {
    if (positives[i] == 0) fail(ErrorCode::ZeroOccurrence, "AU " + std::to_string(i) + " never occurs");
    rates[i] = static_cast<double>(positives[i]) / static_cast<double>(n_valid);
  }
  return weights_from_rates(rates);
}

/**
 * Weighted asymmetric loss over K AUs:
 *   L = -(1/N) sum_frames sum_i w_i [y log p + (1 - y) p log(1 - p)]
 * with p clamped to [eps, 1 - eps]. The negative term keeps the extra factor
 * p. Frames with any -1 label are skipped.
 */
inline Var weighted_asym_loss(Graph& g, Var probs, std::span<const int> labels, const AUWeights& weights,
                              double eps = kProbEpsilon) {
  const std::size_t k = weights.values.size();
  const std::size_t rows = detail::rows_of(probs.value(), k, "weighted_asym_loss");
  if (labels.size() != rows * k) fail(ErrorCode::ShapeMismatch, "AU labels do not match predictions");
  std::vector<std::uint8_t> valid(rows, 1);
  std::size_t n_valid = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      const int y = labels[r * k + i];
      if (y == kInvalidLabel) valid[r] = 0;
      else if (y != 0 && y != 1) fail(ErrorCode::BadLabels, "AU label " + std::to_string(y) + " is not 0/1/-1");
    }
    n_valid += valid[r];
  }
  if (n_valid == 0) fail(ErrorCode::NoValidFrames, "weighted_asym_loss: every frame is masked");
  auto p = probs.value().data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!valid[r]) continue;
    for (std::size_t i = 0; i < k; ++i) {
      const double q = std::clamp(p[r * k + i], eps, 1.0 - eps);
      const double term = labels[r * k + i] == 1 ? std::log(q) : q * std::log(1.0 - q);
      total += weights.values[i] * term;
    }
  }
  const double norm = 1.0 / static_cast<double>(n_valid);
  std::vector<int> ys(labels.begin(), labels.end());
  return g.record("weighted_asym_loss", Tensor::scalar(-total * norm), {probs},
                  [probs, ys = std::move(ys), valid = std::move(valid), w = weights.values, rows, k, norm, eps](
                      Graph& g, std::span<const double> dy, const Tensor&) {
    auto dp = g.adjoint(probs);
    auto p = g.value(probs).data();
    for (std::size_t r = 0; r < rows; ++r) {
      if (!valid[r]) continue;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t idx = r * k + i;
        const double q = p[idx];
        if (q < eps || q > 1.0 - eps) continue;  // clamped: flat
        const double dterm = ys[idx] == 1 ? 1.0 / q : std::log(1.0 - q) - q / (1.0 - q);
        dp[idx] += -dy[0] * norm * w[i] * dterm;
      }
    }
  });
}

/// Mean squared error over all videos and the 7 reaction dimensions.
inline Var mse_eri(Graph& g, Var pred, const Tensor& target) {
  detail::rows_of(pred.value(), kEriDims, "mse_eri");
  if (target.size() != pred.value().size()) fail(ErrorCode::ShapeMismatch, "mse_eri target does not match predictions");
  auto p = pred.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - target[i]) * (p[i] - target[i]);
  const double norm = 1.0 / static_cast<double>(p.size());
  return g.record("mse_eri", Tensor::scalar(total * norm), {pred},
                  [pred, target, norm](Graph& g, std::span<const double> dy, const Tensor&) {
    auto dp = g.adjoint(pred);
    auto p = g.value(pred).data();
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += dy[0] * 2.0 * norm * (p[i] - target[i]);
  });
}

}  // namespace mmaffect
