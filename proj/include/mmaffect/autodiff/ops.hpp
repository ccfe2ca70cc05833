#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mmaffect/autodiff/graph.hpp"
#include "mmaffect/rng.hpp"

namespace mmaffect::ad {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline MatrixMap as_matrix(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMatrixMap as_matrix(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline Graph& graph_of(Var a) {
  if (!a.valid()) fail(ErrorCode::InvalidArgument, "unbound variable");
  return *a.graph();
}

inline Graph& graph_of(Var a, Var b) {
  Graph& g = graph_of(a);
  if (b.graph() != &g) fail(ErrorCode::InvalidArgument, "variables from different graphs");
  return g;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

inline Shape leading(const Shape& s, std::size_t drop) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
}

}  // namespace detail

/// a[..., M, K] x b[K, N] -> [..., M, N]
inline Var matmul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() != 2 || av.shape().back() != bv.dim(0)) {
    fail(ErrorCode::ShapeMismatch,
         "matmul " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t k = bv.dim(0), n = bv.dim(1), rows = av.size() / k;
  Shape out_shape = detail::leading(av.shape(), 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  detail::as_matrix(out.data(), rows, n).noalias() =
      detail::as_matrix(av.data(), rows, k) * detail::as_matrix(bv.data(), k, n);
  return g.record("matmul", std::move(out), {a, b},
                  [a, b, rows, k, n](Graph& g, std::span<const double> dy, const Tensor&) {
    auto dc = detail::as_matrix(dy, rows, n);
    if (g.needs_grad(a)) {
      detail::as_matrix(g.adjoint(a), rows, k).noalias() +=
          dc * detail::as_matrix(g.value(b).data(), k, n).transpose();
    }
    if (g.needs_grad(b)) {
      detail::as_matrix(g.adjoint(b), k, n).noalias() +=
          detail::as_matrix(g.value(a).data(), rows, k).transpose() * dc;
    }
  });
}

/**
 * Batched product over identical leading axes:
 * a[..., M, K] x b[..., K, N] -> [..., M, N], or with transpose_b,
 * a[..., M, K] x b[..., N, K]^T.
 */
inline Var bmm(Var a, Var b, bool transpose_b = false) {
  Graph& g = detail::graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || av.rank() != bv.rank() ||
      detail::leading(av.shape(), 2) != detail::leading(bv.shape(), 2)) {
    fail(ErrorCode::ShapeMismatch, "bmm " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(av.rank() - 2), k = av.shape().back();
  const std::size_t b_rows = bv.dim(bv.rank() - 2), b_cols = bv.shape().back();
  const std::size_t n = transpose_b ? b_rows : b_cols;
  if ((transpose_b ? b_cols : b_rows) != k) {
    fail(ErrorCode::ShapeMismatch,
         "bmm inner dims " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t batch = av.size() / (m * k);
  Shape out_shape = detail::leading(av.shape(), 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < batch; ++i) {
    auto am = detail::as_matrix(av.data().subspan(i * m * k, m * k), m, k);
    auto bm = detail::as_matrix(bv.data().subspan(i * k * n, k * n), b_rows, b_cols);
    auto cm = detail::as_matrix(out.data().subspan(i * m * n, m * n), m, n);
    if (transpose_b) {
      cm.noalias() = am * bm.transpose();
    } else {
      cm.noalias() = am * bm;
    }
  }
  return g.record("bmm", std::move(out), {a, b},
                  [a, b, batch, m, k, n, b_rows, b_cols, transpose_b](Graph& g, std::span<const double> dy,
                                                                      const Tensor&) {
    const bool need_a = g.needs_grad(a), need_b = g.needs_grad(b);
    std::span<double> da = need_a ? g.adjoint(a) : std::span<double>();
    std::span<double> db = need_b ? g.adjoint(b) : std::span<double>();
    auto av = g.value(a).data();
    auto bv = g.value(b).data();
    for (std::size_t i = 0; i < batch; ++i) {
      auto dc = detail::as_matrix(dy.subspan(i * m * n, m * n), m, n);
      auto bm = detail::as_matrix(bv.subspan(i * k * n, k * n), b_rows, b_cols);
      auto am = detail::as_matrix(av.subspan(i * m * k, m * k), m, k);
      if (need_a) {
        auto dam = detail::as_matrix(da.subspan(i * m * k, m * k), m, k);
        if (transpose_b) {
          dam.noalias() += dc * bm;
        } else {
          dam.noalias() += dc * bm.transpose();
        }
      }
      if (need_b) {
        auto dbm = detail::as_matrix(db.subspan(i * k * n, k * n), b_rows, b_cols);
        if (transpose_b) {
          dbm.noalias() += dc.transpose() * am;
        } else {
          dbm.noalias() += am.transpose() * dc;
        }
      }
    }
  });
}

namespace detail {

enum class Binary { Add, Sub, Mul };

// Shapes must match, or the smaller one must equal the trailing axes of the
// larger one (including the rank-0 scalar).
inline Var binary(Var a, Var b, Binary op) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  bool a_is_big = true;
  if (av.shape() != bv.shape()) {
    if (av.rank() >= bv.rank() && is_suffix(bv.shape(), av.shape())) {
      a_is_big = true;
    } else if (bv.rank() > av.rank() && is_suffix(av.shape(), bv.shape())) {
      a_is_big = false;
    } else {
      fail(ErrorCode::ShapeMismatch,
           "cannot broadcast " + shape_string(av.shape()) + " with " + shape_string(bv.shape()));
    }
  }
  const std::size_t na = av.size(), nb = bv.size();
  const std::size_t n = std::max(na, nb);
  Tensor out(a_is_big ? av.shape() : bv.shape());
  auto o = out.data();
  auto x = av.data();
  auto y = bv.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double l = x[i % na], r = y[i % nb];
    switch (op) {
      case Binary::Add: o[i] = l + r; break;
      case Binary::Sub: o[i] = l - r; break;
      case Binary::Mul: o[i] = l * r; break;
    }
  }
  const char* kind = op == Binary::Add ? "add" : op == Binary::Sub ? "sub" : "mul";
  return g.record(kind, std::move(out), {a, b},
                  [a, b, op, na, nb, n](Graph& g, std::span<const double> dy, const Tensor&) {
    if (g.needs_grad(a)) {
      auto da = g.adjoint(a);
      auto y = g.value(b).data();
      for (std::size_t i = 0; i < n; ++i) {
        da[i % na] += op == Binary::Mul ? dy[i] * y[i % nb] : dy[i];
      }
    }
    if (g.needs_grad(b)) {
      auto db = g.adjoint(b);
      auto x = g.value(a).data();
      for (std::size_t i = 0; i < n; ++i) {
        double d = dy[i];
        if (op == Binary::Sub) d = -d;
        if (op == Binary::Mul) d *= x[i % na];
        db[i % nb] += d;
      }
    }
  });
}

// Elementwise op whose derivative is expressed through input and output values.
template <typename Forward, typename Derivative>
Var unary(Var x, const char* kind, Forward f, Derivative df) {
  Graph& g = graph_of(x);
  Tensor out(x.shape());
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return g.record(kind, std::move(out), {x}, [x, df](Graph& g, std::span<const double> dy, const Tensor& y) {
    auto dx = g.adjoint(x);
    auto in = g.value(x).data();
    auto out = y.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * df(in[i], out[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) { return detail::binary(a, b, detail::Binary::Add); }
inline Var sub(Var a, Var b) { return detail::binary(a, b, detail::Binary::Sub); }
inline Var mul(Var a, Var b) { return detail::binary(a, b, detail::Binary::Mul); }

inline Var scale(Var x, double c) {
  return detail::unary(x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var relu(Var x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline double logistic(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return logistic(v); }, [](double, double s) { return s * (1.0 - s); });
}

/// Softmax along `axis`, max-subtracted so large logits do not overflow.
inline Var softmax(Var x, std::size_t axis) {
  Graph& g = detail::graph_of(x);
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) fail(ErrorCode::ShapeMismatch, "softmax axis out of range");
  const std::size_t n = xv.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  Tensor out(xv.shape());
  auto in = xv.data();
  auto o = out.data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * n * inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        o[base + j * inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::size_t j = 0; j < n; ++j) o[base + j * inner] *= inv;
    }
  }
  return g.record("softmax", std::move(out), {x},
                  [x, outer, inner, n](Graph& g, std::span<const double> dy, const Tensor& y) {
    auto dx = g.adjoint(x);
    auto p = y.data();
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * n * inner + c;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[base + j * inner] * p[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          dx[idx] += p[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

/// Normalizes over the last axis with population variance, then applies gamma/beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Graph& g = detail::graph_of(x, gamma);
  detail::graph_of(x, beta);
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (gamma.value().shape() != Shape{d} || beta.value().shape() != Shape{d}) {
    fail(ErrorCode::ShapeMismatch, "layer_norm parameters must have shape [" + std::to_string(d) + "]");
  }
  if (!(eps > 0.0)) fail(ErrorCode::InvalidArgument, "layer_norm eps must be positive");
  const std::size_t rows = xv.size() / d;
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape());
  auto in = xv.data();
  auto gm = gamma.value().data();
  auto bt = beta.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      xhat[r * d + j] = h;
      o[r * d + j] = h * gm[j] + bt[j];
    }
  }
  return g.record("layer_norm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Graph& g, std::span<const double> dy, const Tensor&) {
    auto gm = g.value(gamma).data();
    if (g.needs_grad(gamma)) {
      auto dg = g.adjoint(gamma);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * xhat[r * d + j];
    }
    if (g.needs_grad(beta)) {
      auto db = g.adjoint(beta);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
    }
    if (g.needs_grad(x)) {
      auto dx = g.adjoint(x);
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[r * d + j] * gm[j];
          mean_dh += dh;
          mean_dh_h += dh * xhat[r * d + j];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[r * d + j] * gm[j];
          dx[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
        }
      }
    }
  });
}

/**
 * Temporal cross-correlation with "same" zero padding:
 * x[..., T, D_in], kernels[D_out, D_in, k], bias[D_out] -> [..., T, D_out],
 * out[t, o] = bias[o] + sum_{c, j} x[t + j - (k-1)/2, c] * kernels[o, c, j].
 */
inline Var conv1d(Var x, Var kernels, Var bias) {
  Graph& g = detail::graph_of(x, kernels);
  detail::graph_of(x, bias);
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  if (xv.rank() < 2 || kv.rank() != 3 || kv.dim(1) != xv.shape().back() ||
      bias.value().shape() != Shape{kv.dim(0)}) {
    fail(ErrorCode::ShapeMismatch,
         "conv1d " + shape_string(xv.shape()) + " with kernels " + shape_string(kv.shape()));
  }
  const std::size_t d_out = kv.dim(0), d_in = kv.dim(1), k = kv.dim(2);
  if (k % 2 == 0) fail(ErrorCode::ShapeMismatch, "conv1d kernel size must be odd, got " + std::to_string(k));
  const std::size_t t_len = xv.dim(xv.rank() - 2);
  const std::size_t batch = xv.size() / (t_len * d_in);
  const std::size_t pad = (k - 1) / 2;
  const std::size_t cols = k * d_in;

  // Column-major view of the kernels as a (k * D_in) x D_out matrix.
  auto unfold_kernels = [d_out, d_in, k, cols](std::span<const double> kd) {
    detail::RowMatrix w(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(d_out));
    for (std::size_t o = 0; o < d_out; ++o)
      for (std::size_t c = 0; c < d_in; ++c)
        for (std::size_t j = 0; j < k; ++j) w(j * d_in + c, o) = kd[(o * d_in + c) * k + j];
    return w;
  };
  auto im2col = [t_len, d_in, k, pad, cols](std::span<const double> xs) {
    detail::RowMatrix m = detail::RowMatrix::Zero(static_cast<Eigen::Index>(t_len), static_cast<Eigen::Index>(cols));
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
        for (std::size_t c = 0; c < d_in; ++c) m(t, j * d_in + c) = xs[static_cast<std::size_t>(src) * d_in + c];
      }
    return m;
  };

  const detail::RowMatrix w = unfold_kernels(kv.data());
  Shape out_shape = detail::leading(xv.shape(), 1);
  out_shape.push_back(d_out);
  Tensor out(out_shape);
  auto bd = bias.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const detail::RowMatrix cols_mat = im2col(xv.data().subspan(b * t_len * d_in, t_len * d_in));
    auto ob = detail::as_matrix(out.data().subspan(b * t_len * d_out, t_len * d_out), t_len, d_out);
    ob.noalias() = cols_mat * w;
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t o = 0; o < d_out; ++o) ob(t, o) += bd[o];
  }
  return g.record("conv1d", std::move(out), {x, kernels, bias},
                  [=](Graph& g, std::span<const double> dy, const Tensor&) {
    const bool need_x = g.needs_grad(x), need_k = g.needs_grad(kernels), need_b = g.needs_grad(bias);
    const detail::RowMatrix w = unfold_kernels(g.value(kernels).data());
    detail::RowMatrix dw = detail::RowMatrix::Zero(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(d_out));
    std::span<double> dx = need_x ? g.adjoint(x) : std::span<double>();
    std::span<double> dbias = need_b ? g.adjoint(bias) : std::span<double>();
    auto xs = g.value(x).data();
    for (std::size_t b = 0; b < batch; ++b) {
      auto dyb = detail::as_matrix(dy.subspan(b * t_len * d_out, t_len * d_out), t_len, d_out);
      if (need_k) dw.noalias() += im2col(xs.subspan(b * t_len * d_in, t_len * d_in)).transpose() * dyb;
      if (need_b) {
        for (std::size_t t = 0; t < t_len; ++t)
          for (std::size_t o = 0; o < d_out; ++o) dbias[o] += dyb(t, o);
      }
      if (need_x) {
        const detail::RowMatrix dcols = dyb * w.transpose();
        for (std::size_t t = 0; t < t_len; ++t)
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
            for (std::size_t c = 0; c < d_in; ++c)
              dx[b * t_len * d_in + static_cast<std::size_t>(src) * d_in + c] += dcols(t, j * d_in + c);
          }
      }
    }
    if (need_k) {
      auto dk = g.adjoint(kernels);
      for (std::size_t o = 0; o < d_out; ++o)
        for (std::size_t c = 0; c < d_in; ++c)
          for (std::size_t j = 0; j < k; ++j) dk[(o * d_in + c) * k + j] += dw(j * d_in + c, o);
    }
  });
}

/// Inverted dropout; the identity (and no RNG draw) when not training or p == 0.
inline Var dropout(Var x, double p, bool training, CounterRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::InvalidProbability, "dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  Graph& g = detail::graph_of(x);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  Tensor out(x.shape());
  auto in = x.value().data();
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = in[i] * mask[i];
  return g.record("dropout", std::move(out), {x},
                  [x, mask = std::move(mask)](Graph& g, std::span<const double> dy, const Tensor&) {
    auto dx = g.adjoint(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

inline Var sum(Var x) {
  Graph& g = detail::graph_of(x);
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return g.record("sum", Tensor::scalar(total), {x}, [x](Graph& g, std::span<const double> dy, const Tensor&) {
    for (double& d : g.adjoint(x)) d += dy[0];
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Averages over `axis`, removing it from the shape.
inline Var mean_axis(Var x, std::size_t axis) {
  Graph& g = detail::graph_of(x);
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) fail(ErrorCode::ShapeMismatch, "mean_axis axis out of range");
  const std::size_t n = xv.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
  for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(n);
  auto in = xv.data();
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t c = 0; c < inner; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += in[(a * n + j) * inner + c];
      out[a * inner + c] = s * inv;
    }
  return g.record("mean_axis", std::move(out), {x},
                  [x, outer, inner, n, inv](Graph& g, std::span<const double> dy, const Tensor&) {
    auto dx = g.adjoint(x);
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t c = 0; c < inner; ++c)
        for (std::size_t j = 0; j < n; ++j) dx[(a * n + j) * inner + c] += dy[a * inner + c] * inv;
  });
}

/// Concatenates along the last axis; all other axes must agree.
inline Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat of zero tensors");
  if (parts.size() == 1) return parts[0];
  Graph& g = detail::graph_of(parts[0]);
  const Shape lead = detail::leading(parts[0].shape(), 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::graph_of(parts[0], p);
    if (p.value().rank() == 0 || detail::leading(p.shape(), 1) != lead) {
      fail(ErrorCode::LengthMismatch, "concat " + shape_string(parts[0].shape()) + " with " + shape_string(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  const std::size_t rows = parts[0].value().size() / widths[0];
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto src = parts[i].value().data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * widths[i], widths[i], out.data().data() + r * total + offset);
    offset += widths[i];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record("concat", std::move(out), parts,
                  [inputs, widths, rows, total](Graph& g, std::span<const double> dy, const Tensor&) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (g.needs_grad(inputs[i])) {
        auto dx = g.adjoint(inputs[i]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[i]; ++j) dx[r * widths[i] + j] += dy[r * total + offset + j];
      }
      offset += widths[i];
    }
  });
}

inline Var concat_last(std::initializer_list<Var> parts) {
  return concat_last(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [begin, begin + width) of the last axis.
inline Var slice_last(Var x, std::size_t begin, std::size_t width) {
  Graph& g = detail::graph_of(x);
  const Tensor& xv = x.value();
  const std::size_t d = xv.shape().back();
  if (width == 0 || begin + width > d) fail(ErrorCode::ShapeMismatch, "slice out of range");
  const std::size_t rows = xv.size() / d;
  Shape out_shape = detail::leading(xv.shape(), 1);
  out_shape.push_back(width);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data().data() + r * d + begin, width, out.data().data() + r * width);
  return g.record("slice", std::move(out), {x},
                  [x, rows, d, begin, width](Graph& g, std::span<const double> dy, const Tensor&) {
    auto dx = g.adjoint(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) dx[r * d + begin + j] += dy[r * width + j];
  });
}

inline Var reshape(Var x, Shape shape) {
  Graph& g = detail::graph_of(x);
  if (shape_size(shape) != x.value().size()) {
    fail(ErrorCode::ShapeMismatch, "reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  return g.record("reshape", x.value().reshaped(std::move(shape)), {x},
                  [x](Graph& g, std::span<const double> dy, const Tensor&) {
    auto dx = g.adjoint(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

}  // namespace mmaffect::ad
