#pragma once

#include <cmath>
#include <vector>

#include "mmaffect/autodiff/ops.hpp"
#include "mmaffect/core.hpp"
#include "mmaffect/rng.hpp"

namespace mmaffect {

using ad::Graph;
using ad::Var;

inline constexpr std::size_t kConvLayers = 5;
inline constexpr std::size_t kConvKernel = 3;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, flagged for gradients.
inline Tensor fan_in_uniform(ad::Shape shape, std::size_t fan_in, CounterRng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

inline Tensor trainable(ad::Shape shape, double fill = 0.0) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
inline Tensor sinusoidal_pe(std::size_t length, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) {
    fail(ErrorCode::OddModelDim, "positional encoding needs an even model dim, got " + std::to_string(d_model));
  }
  Tensor pe({length, d_model});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe.at(pos, 2 * i) = std::sin(angle);
      pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

/// Per-feature projection to the model dimension. The weight is stored as
/// [D_i, d_model] so frames (rows) multiply it directly.
struct AffineParams {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t d_model() const { return weight.dim(1); }

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

inline AffineParams make_affine_params(std::size_t in_dim, std::size_t d_model, CounterRng& rng) {
  return {fan_in_uniform({in_dim, d_model}, in_dim, rng), trainable({d_model})};
}

/// f_hat = (f W_A + b_A) + PE for f[..., T, D_i]; pe is T x d_model.
inline Var affine_project(Graph& g, Var features, AffineParams& params, const Tensor& pe) {
  const auto& shape = features.shape();
  if (shape.size() < 2 || shape.back() != params.in_dim()) {
    fail(ErrorCode::ShapeMismatch, "affine input " + ad::shape_string(shape) + " vs weight " +
                                       ad::shape_string(params.weight.shape()));
  }
  if (pe.rank() != 2 || pe.dim(0) != shape[shape.size() - 2] || pe.dim(1) != params.d_model()) {
    fail(ErrorCode::ShapeMismatch, "positional encoding " + ad::shape_string(pe.shape()) + " does not fit input " +
                                       ad::shape_string(shape));
  }
  Var projected = ad::add(ad::matmul(features, g.input(params.weight)), g.input(params.bias));
  return ad::add(projected, g.constant(pe));
}

struct ConvLayerParams {
  Tensor kernels;  // [D_out, D_in, k]
  Tensor bias;     // [D_out]
};

/// Temporal-convolution input block: kConvLayers same-padded convolutions,
/// all of output width d_model, ReLU between consecutive layers.
struct ConvEmbedParams {
  std::vector<ConvLayerParams> layers;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      f(prefix + ".conv" + std::to_string(i) + ".kernels", layers[i].kernels);
      f(prefix + ".conv" + std::to_string(i) + ".bias", layers[i].bias);
    }
  }
};

inline ConvEmbedParams make_conv_embed_params(std::size_t in_dim, std::size_t d_model, CounterRng& rng,
                                              std::size_t n_layers = kConvLayers,
                                              std::size_t kernel = kConvKernel) {
  ConvEmbedParams p;
  std::size_t width = in_dim;
  for (std::size_t l = 0; l < n_layers; ++l) {
    p.layers.push_back({fan_in_uniform({d_model, width, kernel}, width * kernel, rng), trainable({d_model})});
    width = d_model;
  }
  return p;
}

inline Var conv_embed(Graph& g, Var features, ConvEmbedParams& params, const Tensor& pe) {
  if (params.layers.empty()) fail(ErrorCode::ShapeMismatch, "conv embedding without layers");
  Var x = features;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    x = ad::conv1d(x, g.input(params.layers[l].kernels), g.input(params.layers[l].bias));
    if (l + 1 < params.layers.size()) x = ad::relu(x);
  }
  const auto& shape = x.shape();
  if (pe.rank() != 2 || pe.dim(0) != shape[shape.size() - 2] || pe.dim(1) != shape.back()) {
    fail(ErrorCode::ShapeMismatch, "positional encoding " + ad::shape_string(pe.shape()) + " does not fit " +
                                       ad::shape_string(shape));
  }
  return ad::add(x, g.constant(pe));
}

}  // namespace mmaffect
