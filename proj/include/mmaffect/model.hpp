#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmaffect/affine.hpp"
#include "mmaffect/encoder.hpp"
#include "mmaffect/heads.hpp"

namespace mmaffect {

struct ModelConfig {
  Task task = Task::VA;
  EncoderVariant variant = EncoderVariant::Classic;
  std::size_t d_model = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  double dropout = 0.1;
  std::size_t head_hidden = 256;  // TEMMA head only
  FeatureRegistry features;

  /// Feature indices per modality, modalities in order of first appearance.
  std::vector<std::vector<std::size_t>> modality_groups() const {
    std::vector<Modality> seen;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto it = std::find(seen.begin(), seen.end(), features[i].modality);
      if (it == seen.end()) {
        seen.push_back(features[i].modality);
        groups.emplace_back();
        it = seen.end() - 1;
      }
      groups[static_cast<std::size_t>(it - seen.begin())].push_back(i);
    }
    return groups;
  }

  EncoderConfig encoder_config() const {
    if (variant == EncoderVariant::Classic) return classic_config(features.size() * d_model, n_layers, n_heads, dropout);
    return temma_config(d_model, n_layers, n_heads, dropout);
  }

  /// Width of the temporal feature t entering the head.
  std::size_t temporal_width() const {
    return variant == EncoderVariant::Classic ? features.size() * d_model : modality_groups().size() * d_model;
  }

  void validate() const {
    if (features.empty()) fail(ErrorCode::InvalidConfig, "model needs at least one feature");
    if (d_model == 0 || d_model % 2 != 0) fail(ErrorCode::OddModelDim, "d_model must be even, got " + std::to_string(d_model));
    encoder_config().validate();
  }
};

struct ModelParams {
  std::vector<AffineParams> affine;      // Classic: one per feature
  std::vector<ConvEmbedParams> conv;     // TEMMA: one per modality group
  std::vector<EncoderLayerParams> layers;
  std::vector<TemmaBlockParams> blocks;
  HeadParams head;

  /// Visits every learnable tensor with a stable name, in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t i = 0; i < affine.size(); ++i) affine[i].for_each("affine" + std::to_string(i), f);
    for (std::size_t i = 0; i < conv.size(); ++i) conv[i].for_each("conv" + std::to_string(i), f);
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].for_each("layer" + std::to_string(l), f);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (std::size_t s = 0; s < blocks[b].streams.size(); ++s)
        blocks[b].streams[s].for_each("block" + std::to_string(b) + ".stream" + std::to_string(s), f);
    head.for_each("head", f);
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each([&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor& t) { t.zero_grad(); });
  }
};

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CounterRng rng = CounterRng(seed).derive("init");
  const EncoderConfig enc = cfg.encoder_config();
  ModelParams p;
  if (cfg.variant == EncoderVariant::Classic) {
    for (const auto& d : cfg.features) p.affine.push_back(make_affine_params(d.dim, cfg.d_model, rng));
    p.layers = make_classic_layers(enc, rng);
    p.head = make_head_params(cfg.task, cfg.temporal_width(), rng);
  } else {
    const auto groups = cfg.modality_groups();
    for (const auto& group : groups) {
      std::size_t in_dim = 0;
      for (std::size_t i : group) in_dim += cfg.features[i].dim;
      p.conv.push_back(make_conv_embed_params(in_dim, cfg.d_model, rng));
    }
    p.blocks = make_temma_blocks(enc, groups.size(), rng);
    p.head = make_head_params(cfg.task, cfg.temporal_width(), rng, cfg.head_hidden);
  }
  return p;
}

/**
 * Full forward pass. `features` holds one [..., T, D_i] tensor per
 * registered feature in registry order. Classic: per-feature affine + PE,
 * concatenation, Transformer encoder. TEMMA: features of one modality are
 * concatenated and embedded by the convolution block, then the multimodal
 * encoder. Returns the raw head output.
 */
inline Var forward(Graph& g, ModelParams& p, const ModelConfig& cfg, std::span<const Tensor> features,
                   const ForwardContext& ctx = {}) {
  if (features.size() != cfg.features.size()) {
    fail(ErrorCode::ShapeMismatch, "model expects " + std::to_string(cfg.features.size()) + " feature tensors, got " +
                                       std::to_string(features.size()));
  }
  const auto& first = features.front().shape();
  if (first.size() < 2) fail(ErrorCode::ShapeMismatch, "features must be at least [T, D]");
  const std::size_t frames = first[first.size() - 2];
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& s = features[i].shape();
    if (s.size() != first.size() || s[s.size() - 2] != frames || s.back() != cfg.features[i].dim ||
        !std::equal(s.begin(), s.end() - 2, first.begin())) {
      fail(ErrorCode::ShapeMismatch, "feature '" + cfg.features[i].name + "' has shape " + ad::shape_string(s));
    }
  }
  const Tensor pe = sinusoidal_pe(frames, cfg.d_model);
  const EncoderConfig enc = cfg.encoder_config();
  Var t;
  if (cfg.variant == EncoderVariant::Classic) {
    std::vector<Var> projected;
    for (std::size_t i = 0; i < features.size(); ++i)
      projected.push_back(affine_project(g, g.constant(features[i]), p.affine[i], pe));
    t = transformer_encode(g, concat_features(projected), p.layers, enc, ctx);
  } else {
    std::vector<Var> streams;
    const auto groups = cfg.modality_groups();
    for (std::size_t k = 0; k < groups.size(); ++k) {
      std::vector<Var> parts;
      for (std::size_t i : groups[k]) parts.push_back(g.constant(features[i]));
      Var x = parts.size() == 1 ? parts.front() : ad::concat_last(parts);
      streams.push_back(conv_embed(g, x, p.conv[k], pe));
    }
    t = temma_encode(g, std::move(streams), p.blocks, enc, ctx);
  }
  return output_layer(g, t, p.head, ctx);
}

}  // namespace mmaffect
