#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mmaffect/affine.hpp"
#include "mmaffect/autodiff/ops.hpp"

namespace mmaffect {

enum class EncoderVariant { Classic, TEMMA };

inline std::string_view to_string(EncoderVariant v) { return v == EncoderVariant::Classic ? "classic" : "temma"; }

inline EncoderVariant parse_variant(std::string_view s) {
  if (s == "classic") return EncoderVariant::Classic;
  if (s == "temma") return EncoderVariant::TEMMA;
  fail(ErrorCode::InvalidArgument, "unknown encoder variant '" + std::string(s) + "'");
}

struct EncoderConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_in = 256;  // Classic: concat width n * d_model. TEMMA: per-stream width d_model.
  std::size_t d_ff = 1024;
  double dropout = 0.1;
  EncoderVariant variant = EncoderVariant::Classic;

  void validate() const {
    if (n_heads == 0 || d_in % n_heads != 0) {
      fail(ErrorCode::InvalidArgument,
           "model width " + std::to_string(d_in) + " is not divisible by " + std::to_string(n_heads) + " heads");
    }
    if (d_ff < d_in) fail(ErrorCode::InvalidArgument, "feed-forward width must be at least the model width");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorCode::InvalidProbability, "dropout must lie in [0, 1)");
  }
};

/// Feed-forward width is four times the stream width.
inline EncoderConfig classic_config(std::size_t d_in, std::size_t n_layers = 4, std::size_t n_heads = 4,
                                    double dropout = 0.1) {
  return {n_layers, n_heads, d_in, 4 * d_in, dropout, EncoderVariant::Classic};
}

inline EncoderConfig temma_config(std::size_t d_model, std::size_t n_layers = 4, std::size_t n_heads = 4,
                                  double dropout = 0.2) {
  return {n_layers, n_heads, d_model, 4 * d_model, dropout, EncoderVariant::TEMMA};
}

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".bq", bq);
    f(prefix + ".wk", wk);
    f(prefix + ".bk", bk);
    f(prefix + ".wv", wv);
    f(prefix + ".bv", bv);
    f(prefix + ".wo", wo);
    f(prefix + ".bo", bo);
  }
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  AttentionParams attention;
  LayerNormParams norm1;
  FeedForwardParams ff;
  LayerNormParams norm2;

  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    attention.for_each(prefix + ".attn", f);
    f(prefix + ".norm1.gamma", norm1.gamma);
    f(prefix + ".norm1.beta", norm1.beta);
    f(prefix + ".ff.w1", ff.w1);
    f(prefix + ".ff.b1", ff.b1);
    f(prefix + ".ff.w2", ff.w2);
    f(prefix + ".ff.b2", ff.b2);
    f(prefix + ".norm2.gamma", norm2.gamma);
    f(prefix + ".norm2.beta", norm2.beta);
  }
};

/// Queries come from a d-wide stream; keys and values from a d_kv-wide one
/// (d_kv == d for self-attention).
inline EncoderLayerParams make_encoder_layer_params(std::size_t d, std::size_t d_kv, std::size_t d_ff,
                                                    CounterRng& rng) {
  EncoderLayerParams p;
  p.attention.wq = fan_in_uniform({d, d}, d, rng);
  p.attention.bq = trainable({d});
  p.attention.wk = fan_in_uniform({d_kv, d}, d_kv, rng);
  p.attention.bk = trainable({d});
  p.attention.wv = fan_in_uniform({d_kv, d}, d_kv, rng);
  p.attention.bv = trainable({d});
  p.attention.wo = fan_in_uniform({d, d}, d, rng);
  p.attention.bo = trainable({d});
  p.norm1 = {trainable({d}, 1.0), trainable({d})};
  p.ff.w1 = fan_in_uniform({d, d_ff}, d, rng);
  p.ff.b1 = trainable({d_ff});
  p.ff.w2 = fan_in_uniform({d_ff, d}, d_ff, rng);
  p.ff.b2 = trainable({d});
  p.norm2 = {trainable({d}, 1.0), trainable({d})};
  return p;
}

/// One multimodal block: a parameter set per modality stream.
struct TemmaBlockParams {
  std::vector<EncoderLayerParams> streams;
};

/// Per layer, per head: softmax weights shaped [..., T, T].
using AttentionWeights = std::vector<std::vector<Tensor>>;

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  CounterRng* rng = nullptr;
  AttentionWeights* attention = nullptr;  // collects weights when set

  Var maybe_dropout(Var x) const {
    if (!training || dropout == 0.0) return x;
    if (!rng) fail(ErrorCode::InvalidArgument, "training forward pass needs an RNG");
    return ad::dropout(x, dropout, true, *rng);
  }
};

struct AttentionOutput {
  Var output;
  std::vector<Tensor> weights;  // empty unless requested
};

/**
 * Scaled dot-product attention with n_heads heads. Per head h,
 * softmax(Q_h K_h^T / sqrt(d_h)) V_h with d_h = d / n_heads; the heads are
 * concatenated and passed through the output projection. No mask.
 */
inline AttentionOutput multi_head_attention(Graph& g, Var query_in, Var kv_in, AttentionParams& p,
                                            std::size_t n_heads, bool keep_weights = false) {
  const std::size_t d = p.wq.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    fail(ErrorCode::ShapeMismatch, "width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads));
  }
  if (query_in.shape().back() != p.wq.dim(0) || kv_in.shape().back() != p.wk.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "attention inputs " + ad::shape_string(query_in.shape()) + " / " +
                                       ad::shape_string(kv_in.shape()) + " do not match projections");
  }
  Var q = ad::add(ad::matmul(query_in, g.input(p.wq)), g.input(p.bq));
  Var k = ad::add(ad::matmul(kv_in, g.input(p.wk)), g.input(p.bk));
  Var v = ad::add(ad::matmul(kv_in, g.input(p.wv)), g.input(p.bv));
  const std::size_t d_head = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  const std::size_t time_axis = q.shape().size() - 1;
  AttentionOutput result;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Var qh = n_heads == 1 ? q : ad::slice_last(q, h * d_head, d_head);
    Var kh = n_heads == 1 ? k : ad::slice_last(k, h * d_head, d_head);
    Var vh = n_heads == 1 ? v : ad::slice_last(v, h * d_head, d_head);
    Var weights = ad::softmax(ad::scale(ad::bmm(qh, kh, true), inv_sqrt), time_axis);
    if (keep_weights) result.weights.push_back(weights.value());
    heads.push_back(ad::bmm(weights, vh));
  }
  Var merged = ad::concat_last(heads);
  result.output = ad::add(ad::matmul(merged, g.input(p.wo)), g.input(p.bo));
  return result;
}

/// Post-norm block: h = LN(x + MHA(x, kv)); out = LN(h + FFN(h)).
inline Var encoder_block(Graph& g, Var x, Var kv, EncoderLayerParams& p, std::size_t n_heads,
                         const ForwardContext& ctx) {
  auto attn = multi_head_attention(g, x, kv, p.attention, n_heads, ctx.attention != nullptr);
  if (ctx.attention) ctx.attention->push_back(std::move(attn.weights));
  Var h = ad::layer_norm(ad::add(x, ctx.maybe_dropout(attn.output)), g.input(p.norm1.gamma),
                         g.input(p.norm1.beta));
  Var ff = ad::relu(ad::add(ad::matmul(h, g.input(p.ff.w1)), g.input(p.ff.b1)));
  ff = ad::add(ad::matmul(ff, g.input(p.ff.w2)), g.input(p.ff.b2));
  return ad::layer_norm(ad::add(h, ctx.maybe_dropout(ff)), g.input(p.norm2.gamma), g.input(p.norm2.beta));
}

inline Var encoder_layer(Graph& g, Var x, EncoderLayerParams& p, std::size_t n_heads,
                         const ForwardContext& ctx = {}) {
  return encoder_block(g, x, x, p, n_heads, ctx);
}

/// Frame-wise concatenation of the affine outputs, in registry order.
inline Var concat_features(std::span<const Var> projected) {
  if (projected.empty()) fail(ErrorCode::LengthMismatch, "no features to concatenate");
  return ad::concat_last(projected);
}

inline Var transformer_encode(Graph& g, Var x, std::vector<EncoderLayerParams>& layers, const EncoderConfig& cfg,
                              const ForwardContext& ctx = {}) {
  if (cfg.variant != EncoderVariant::Classic) {
    fail(ErrorCode::InvalidArgument, "transformer_encode needs the classic variant");
  }
  if (x.shape().back() != cfg.d_in) {
    fail(ErrorCode::ShapeMismatch, "encoder input width " + std::to_string(x.shape().back()) + " != " +
                                       std::to_string(cfg.d_in));
  }
  for (auto& layer : layers) x = encoder_layer(g, x, layer, cfg.n_heads, ctx);
  return x;
}

/**
 * Multimodal encoder: in every block each modality stream queries the
 * frame-wise concatenation of all streams (the block's inputs), followed by
 * that stream's residual/norm and feed-forward sub-layers. The streams are
 * concatenated after the last block. With one stream this is exactly
 * transformer_encode.
 */
inline Var temma_encode(Graph& g, std::vector<Var> streams, std::vector<TemmaBlockParams>& blocks,
                        const EncoderConfig& cfg, const ForwardContext& ctx = {}) {
  if (cfg.variant != EncoderVariant::TEMMA) fail(ErrorCode::InvalidArgument, "temma_encode needs the TEMMA variant");
  if (streams.empty()) fail(ErrorCode::ShapeMismatch, "temma_encode without streams");
  for (const Var& s : streams) {
    if (s.shape() != streams.front().shape() || s.shape().back() != cfg.d_in) {
      fail(ErrorCode::ShapeMismatch, "modality stream " + ad::shape_string(s.shape()) + " does not match " +
                                         ad::shape_string(streams.front().shape()));
    }
  }
  for (auto& block : blocks) {
    if (block.streams.size() != streams.size()) {
      fail(ErrorCode::ShapeMismatch, "block has parameters for " + std::to_string(block.streams.size()) +
                                         " streams, got " + std::to_string(streams.size()));
    }
    Var kv = ad::concat_last(streams);
    std::vector<Var> next;
    for (std::size_t s = 0; s < streams.size(); ++s) {
      next.push_back(encoder_block(g, streams[s], kv, block.streams[s], cfg.n_heads, ctx));
    }
    streams = std::move(next);
  }
  return ad::concat_last(streams);
}

inline std::vector<EncoderLayerParams> make_classic_layers(const EncoderConfig& cfg, CounterRng& rng) {
  cfg.validate();
  std::vector<EncoderLayerParams> layers;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) layers.push_back(make_encoder_layer_params(cfg.d_in, cfg.d_in, cfg.d_ff, rng));
  return layers;
}

inline std::vector<TemmaBlockParams> make_temma_blocks(const EncoderConfig& cfg, std::size_t n_streams,
                                                       CounterRng& rng) {
  cfg.validate();
  std::vector<TemmaBlockParams> blocks(cfg.n_layers);
  for (auto& block : blocks)
    for (std::size_t s = 0; s < n_streams; ++s)
      block.streams.push_back(make_encoder_layer_params(cfg.d_in, n_streams * cfg.d_in, cfg.d_ff, rng));
  return blocks;
}

}  // namespace mmaffect
