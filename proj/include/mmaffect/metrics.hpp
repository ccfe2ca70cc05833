#pragma once

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmaffect/core.hpp"

namespace mmaffect {

namespace detail {

struct Moments {
  double mean_x = 0, mean_y = 0, var_x = 0, var_y = 0, cov = 0;
};

// Population (1/N) moments.
inline Moments moments(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::ShapeMismatch, "series lengths differ");
  if (x.size() < 2) fail(ErrorCode::TooShort, "need at least two samples, got " + std::to_string(x.size()));
  const double n = static_cast<double>(x.size());
  Moments m;
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mean_x += x[i];
    m.mean_y += y[i];
  }
  m.mean_x /= n;
  m.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.mean_x, dy = y[i] - m.mean_y;
    m.var_x += dx * dx;
    m.var_y += dy * dy;
    m.cov += dx * dy;
  }
  m.var_x /= n;
  m.var_y /= n;
  m.cov /= n;
  return m;
}

}  // namespace detail

/// Lin's concordance correlation coefficient; 1 for identical constant series.
inline double ccc(std::span<const double> x, std::span<const double> y) {
  const auto m = detail::moments(x, y);
  const double shift = m.mean_x - m.mean_y;
  const double denom = m.var_x + m.var_y + shift * shift;
  if (denom == 0.0) return 1.0;
  return 2.0 * m.cov / denom;
}

/// Pearson correlation; 0 when either series is constant.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  const auto m = detail::moments(x, y);
  if (m.var_x == 0.0 || m.var_y == 0.0) return 0.0;
  return m.cov / std::sqrt(m.var_x * m.var_y);
}

struct VaScores {
  double valence = 0, arousal = 0, mean = 0;
};

/// CCC per VA dimension over frames with mask set; pred/truth are N x 2 row-major.
inline VaScores mean_ccc(std::span<const double> pred, std::span<const double> truth,
                         std::span<const std::uint8_t> mask) {
  if (pred.size() != truth.size() || pred.size() != mask.size() * kVaDims) {
    fail(ErrorCode::ShapeMismatch, "mean_ccc inputs disagree in length");
  }
  std::array<std::vector<double>, kVaDims> p, t;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t d = 0; d < kVaDims; ++d) {
      p[d].push_back(pred[r * kVaDims + d]);
      t[d].push_back(truth[r * kVaDims + d]);
    }
  }
  VaScores s;
  s.valence = ccc(p[0], t[0]);
  s.arousal = ccc(p[1], t[1]);
  s.mean = 0.5 * (s.valence + s.arousal);
  return s;
}

/// F1 of each class; a class absent from both truth and prediction scores 0.
/// Frames whose truth is -1 are skipped.
inline std::vector<double> per_class_f1(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes) {
  if (truth.size() != pred.size()) fail(ErrorCode::ShapeMismatch, "macro_f1 inputs disagree in length");
  std::vector<std::size_t> tp(n_classes), fp(n_classes), fn(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kInvalidLabel) continue;
    const auto y = static_cast<std::size_t>(truth[i]);
    const auto h = static_cast<std::size_t>(pred[i]);
    if (y >= n_classes || h >= n_classes) fail(ErrorCode::BadLabels, "class index out of range");
    if (y == h) {
      ++tp[y];
    } else {
      ++fn[y];
      ++fp[h];
    }
  }
  std::vector<double> f1(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1[c] = denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  return f1;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double macro_f1(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes) {
  return mean_of(per_class_f1(truth, pred, n_classes));
}

/// Positive-class F1 per AU after thresholding probabilities; N x K row-major.
/// Frames holding any -1 truth entry are skipped.
inline std::vector<double> au_f1(std::span<const int> truth, std::span<const double> probs, std::size_t n_aus,
                                 double threshold = 0.5) {
  if (truth.size() != probs.size() || n_aus == 0 || truth.size() % n_aus != 0) {
    fail(ErrorCode::ShapeMismatch, "au_f1 inputs disagree in length");
  }
  const std::size_t rows = truth.size() / n_aus;
  std::vector<std::size_t> tp(n_aus), fp(n_aus), fn(n_aus);
  for (std::size_t r = 0; r < rows; ++r) {
    bool valid = true;
    for (std::size_t i = 0; i < n_aus; ++i) valid = valid && truth[r * n_aus + i] != kInvalidLabel;
    if (!valid) continue;
    for (std::size_t i = 0; i < n_aus; ++i) {
      const bool y = truth[r * n_aus + i] == 1;
      const bool h = probs[r * n_aus + i] >= threshold;
      tp[i] += y && h;
      fp[i] += !y && h;
      fn[i] += y && !h;
    }
  }
  std::vector<double> f1(n_aus, 0.0);
  for (std::size_t i = 0; i < n_aus; ++i) {
    const double denom = static_cast<double>(2 * tp[i] + fp[i] + fn[i]);
    f1[i] = denom > 0.0 ? 2.0 * static_cast<double>(tp[i]) / denom : 0.0;
  }
  return f1;
}

/// Pearson r per column across rows (videos) of V x C matrices.
inline std::vector<double> per_dim_pcc(std::span<const double> truth, std::span<const double> pred, std::size_t dims) {
  if (truth.size() != pred.size() || dims == 0 || truth.size() % dims != 0) {
    fail(ErrorCode::ShapeMismatch, "mean_pcc inputs disagree in length");
  }
  const std::size_t rows = truth.size() / dims;
  if (rows < 2) fail(ErrorCode::TooShort, "mean_pcc needs at least two videos");
  std::vector<double> out;
  std::vector<double> a(rows), b(rows);
  for (std::size_t c = 0; c < dims; ++c) {
    for (std::size_t r = 0; r < rows; ++r) {
      a[r] = truth[r * dims + c];
      b[r] = pred[r * dims + c];
    }
    out.push_back(pearson(a, b));
  }
  return out;
}

inline double mean_pcc(std::span<const double> truth, std::span<const double> pred, std::size_t dims = kEriDims) {
  return mean_of(per_dim_pcc(truth, pred, dims));
}

inline std::string format_double(double v, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

struct EvalReport {
  Task task = Task::VA;
  std::vector<std::pair<std::string, double>> scores;  // per dimension / class / AU
  double aggregate = 0.0;
  std::size_t n_valid = 0;

  std::string metric_name() const {
    switch (task) {
      case Task::VA: return "mean_ccc";
      case Task::Expr: return "macro_f1";
      case Task::AU: return "mean_f1";
      case Task::ERI: return "mean_pcc";
    }
    return "score";
  }

  /// key=value lines.
  std::string to_text(int digits = 10) const {
    std::string s = "task=" + std::string(to_string(task)) + "\n";
    s += "metric=" + metric_name() + "\n";
    s += "aggregate=" + format_double(aggregate, digits) + "\n";
    s += "n_valid=" + std::to_string(n_valid) + "\n";
    for (const auto& [k, v] : scores) s += k + "=" + format_double(v, digits) + "\n";
    return s;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = std::string(to_string(task));
    j["metric"] = metric_name();
    j["aggregate"] = aggregate;
    j["n_valid"] = n_valid;
    nlohmann::ordered_json per;
    for (const auto& [k, v] : scores) per[k] = v;
    j["scores"] = per;
    return j;
  }
};

}  // namespace mmaffect
