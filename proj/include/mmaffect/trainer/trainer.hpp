#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmaffect/dataio/dataset.hpp"
#include "mmaffect/model.hpp"
#include "mmaffect/trainer/adam.hpp"
#include "mmaffect/trainer/checkpoint.hpp"
#include "mmaffect/trainer/config.hpp"
#include "mmaffect/trainer/inference.hpp"

namespace mmaffect {

inline ModelConfig make_model_config(const TrainConfig& c, const FeatureRegistry& available) {
  ModelConfig m;
  m.task = c.task;
  m.variant = c.encoder;
  m.d_model = c.d_model;
  m.n_layers = c.n_layers;
  m.n_heads = c.n_heads;
  m.dropout = c.effective_dropout();
  m.head_hidden = c.head_hidden;
  m.features = c.features.empty() ? available : available.subset(c.features);
  m.validate();
  return m;
}

/// Restricts every video to the features of `registry` (a subset of data.registry), keeping its order.
inline Dataset select_features(const Dataset& data, const FeatureRegistry& registry) {
  Dataset out;
  out.task = data.task;
  out.registry = registry;
  auto pick = [&](const std::vector<Video>& videos, std::vector<Video>& into) {
    for (const auto& v : videos) {
      Video w;
      w.id = v.id;
      w.labels = v.labels;
      for (const auto& d : registry) w.features.push_back(v.features.at(data.registry.index_of(d.name)));
      into.push_back(std::move(w));
    }
  };
  pick(data.train, out.train);
  pick(data.val, out.val);
  return out;
}

/// Stacks equal-length segments into one [B, T, D_i] tensor per feature.
inline std::vector<Tensor> stack_features(const std::vector<const Segment*>& batch) {
  std::vector<Tensor> out;
  const std::size_t n_features = batch.front()->features.size();
  for (std::size_t i = 0; i < n_features; ++i) {
    const Tensor& first = batch.front()->features[i];
    std::vector<double> data;
    data.reserve(batch.size() * first.size());
    for (const Segment* s : batch) {
      if (s->features[i].shape() != first.shape()) fail(ErrorCode::ShapeMismatch, "batch mixes segment shapes");
      data.insert(data.end(), s->features[i].data().begin(), s->features[i].data().end());
    }
    out.emplace_back(ad::Shape{batch.size(), first.dim(0), first.dim(1)}, std::move(data));
  }
  return out;
}

struct BatchLoss {
  Var loss;
  double weight = 0.0;  // valid frames (frame tasks) or videos (ERI)
};

/// Task loss of one batch from the raw head output; nullopt when no frame is annotated.
inline std::optional<BatchLoss> batch_loss(Graph& g, Var raw, Task task, const std::vector<const Segment*>& batch,
                                           const AUWeights* au_weights) {
  std::size_t n_valid = 0;
  for (const Segment* s : batch)
    for (auto m : s->valid_mask) n_valid += m;
  if (task != Task::ERI && n_valid == 0) return std::nullopt;
  switch (task) {
    case Task::VA: {
      std::vector<double> target;
      std::vector<std::uint8_t> mask;
      for (const Segment* s : batch) {
        for (const auto& f : s->labels.va().frames) target.insert(target.end(), f.begin(), f.end());
        mask.insert(mask.end(), s->valid_mask.begin(), s->valid_mask.end());
      }
      const Tensor t(raw.shape(), std::move(target));
      return BatchLoss{mse_va(g, raw, t, mask), static_cast<double>(n_valid)};
    }
    case Task::Expr: {
      std::vector<int> labels;
      for (const Segment* s : batch) labels.insert(labels.end(), s->labels.expr().frames.begin(), s->labels.expr().frames.end());
      return BatchLoss{ce_expr(g, raw, labels), static_cast<double>(n_valid)};
    }
    case Task::AU: {
      if (!au_weights) fail(ErrorCode::InvalidArgument, "AU loss needs occurrence weights");
      std::vector<int> labels;
      for (const Segment* s : batch)
        for (const auto& f : s->labels.au().frames) labels.insert(labels.end(), f.begin(), f.end());
      return BatchLoss{weighted_asym_loss(g, ad::sigmoid(raw), labels, *au_weights), static_cast<double>(n_valid)};
    }
    case Task::ERI: {
      std::vector<double> target;
      for (const Segment* s : batch) target.insert(target.end(), s->labels.eri().values.begin(), s->labels.eri().values.end());
      const Tensor t(raw.shape(), std::move(target));
      return BatchLoss{mse_eri(g, ad::sigmoid(raw), t), static_cast<double>(batch.size())};
    }
  }
  return std::nullopt;
}

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<EvalReport> val;
};

/// One metrics-log line with every number at full precision.
inline std::string format_epoch_log(const EpochLog& log) {
  std::string s = "epoch=" + std::to_string(log.epoch) + " train_loss=" + format_double(log.train_loss);
  if (log.val) {
    s += " val_" + log.val->metric_name() + "=" + format_double(log.val->aggregate);
    for (const auto& [k, v] : log.val->scores) s += " " + k + "=" + format_double(v);
  }
  return s + "\n";
}

/**
 * Owns the model, optimizer state and the segmented training split. All
 * randomness is keyed on the seed: initialization on "init", batch order on
 * ("batches", epoch), dropout masks on ("dropout", step). Resuming from a
 * checkpoint therefore continues the exact trajectory.
 */
class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& data) : config_(std::move(config)) {
    config_.validate();
    if (data.task != config_.task) {
      fail(ErrorCode::TaskMismatch, "dataset holds " + std::string(to_string(data.task)) + " data, config trains " +
                                        std::string(to_string(config_.task)));
    }
    model_ = make_model_config(config_, data.registry);
    data_ = select_features(data, model_.features);
    params_ = init_model(model_, config_.seed);
    for (Tensor* t : params_.tensors()) moments_.emplace_back(t->size());
    for (const auto& v : data_.train) {
      auto segs = segment_video(v, config_.segment_length);
      segments_.insert(segments_.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
    }
    if (segments_.empty()) fail(ErrorCode::EmptyVideo, "training split is empty");
    if (config_.task == Task::AU) {
      std::vector<std::array<int, kAuCount>> frames;
      for (const auto& v : data_.train) frames.insert(frames.end(), v.labels.au().frames.begin(), v.labels.au().frames.end());
      au_weights_ = compute_au_weights(frames);
    }
  }

  const TrainConfig& config() const { return config_; }
  const ModelConfig& model_config() const { return model_; }
  ModelParams& params() { return params_; }
  const Dataset& data() const { return data_; }
  const std::optional<AUWeights>& au_weights() const { return au_weights_; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }

  /// One pass over the training segments; returns the valid-frame-weighted mean batch loss.
  double train_epoch() {
    const AdamConfig adam{config_.lr, config_.beta1, config_.beta2, config_.eps};
    const auto tensors = params_.tensors();
    const auto batches = make_batches(segments_, config_.batch_size, CounterRng(config_.seed).derive("batches", epoch_));
    double total = 0.0, weight = 0.0;
    for (const auto& indices : batches) {
      std::vector<const Segment*> batch;
      for (std::size_t i : indices) batch.push_back(&segments_[i]);
      const auto features = stack_features(batch);
      Graph g;
      CounterRng dropout_rng = CounterRng(config_.seed).derive("dropout", step_);
      const ForwardContext ctx{true, model_.dropout, &dropout_rng, nullptr};
      Var raw = forward(g, params_, model_, features, ctx);
      auto loss = batch_loss(g, raw, model_.task, batch, au_weights_ ? &*au_weights_ : nullptr);
      if (!loss) continue;
      params_.zero_grad();
      g.backward(loss->loss);
      clip_gradients(tensors);
      ++step_;
      for (std::size_t k = 0; k < tensors.size(); ++k) adam_step(*tensors[k], moments_[k], step_, adam);
      total += loss->loss.value().item() * loss->weight;
      weight += loss->weight;
    }
    params_.zero_grad();
    ++epoch_;
    return weight > 0.0 ? total / weight : 0.0;
  }

  EvalReport evaluate(const std::vector<Video>& videos) {
    return mmaffect::evaluate(params_, model_, videos, config_.segment_length);
  }

  EpochLog run_epoch() {
    EpochLog log;
    log.train_loss = train_epoch();
    log.epoch = epoch_;
    if (!data_.val.empty()) log.val = evaluate(data_.val);
    return log;
  }

  /**
   * Trains until config.epochs epochs are complete (counting epochs restored
   * from a checkpoint) or the validation aggregate reaches target_score.
   * Checkpoints go to checkpoint_dir/latest.mmck when a directory is set.
   */
  std::vector<EpochLog> train(const std::function<void(const EpochLog&)>& on_epoch = {}) {
    std::vector<EpochLog> logs;
    while (epoch_ < config_.epochs) {
      logs.push_back(run_epoch());
      const EpochLog& log = logs.back();
      if (on_epoch) on_epoch(log);
      const bool reached = config_.target_score && log.val && log.val->aggregate >= *config_.target_score;
      const bool last = reached || epoch_ == config_.epochs;
      if (!config_.checkpoint_dir.empty() &&
          (last || (config_.checkpoint_every > 0 && epoch_ % config_.checkpoint_every == 0))) {
        mmaffect::save_checkpoint(checkpoint(), latest_checkpoint_path());
      }
      if (reached) break;
    }
    return logs;
  }

  std::filesystem::path latest_checkpoint_path() const {
    return std::filesystem::path(config_.checkpoint_dir) / "latest.mmck";
  }

  Checkpoint checkpoint() {
    Checkpoint ck;
    ck.config_text = config_.to_text();
    ck.config_hash = config_.hash();
    ck.epoch = epoch_;
    ck.step = step_;
    std::size_t k = 0;
    params_.for_each([&](const std::string& name, Tensor& t) {
      Tensor value(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
      ck.tensors.push_back({name, std::move(value), moments_[k++]});
    });
    return ck;
  }

  void restore(const Checkpoint& ck) {
    if (ck.config_hash != config_.hash()) {
      fail(ErrorCode::ConfigHashMismatch, "checkpoint was written by a different configuration");
    }
    restore_tensors(params_, ck, &moments_);
    epoch_ = ck.epoch;
    step_ = ck.step;
  }

  void resume(const std::filesystem::path& path) { restore(load_checkpoint(path)); }
  void save_checkpoint(const std::filesystem::path& path) { mmaffect::save_checkpoint(checkpoint(), path); }

  /// Copies checkpoint tensors into `params` (and optionally the optimizer moments), matching by name and shape.
  static void restore_tensors(ModelParams& params, const Checkpoint& ck, std::vector<AdamMoments>* moments) {
    std::size_t k = 0;
    params.for_each([&](const std::string& name, Tensor& t) {
      if (k >= ck.tensors.size() || ck.tensors[k].name != name || ck.tensors[k].value.shape() != t.shape()) {
        fail(ErrorCode::CorruptCheckpoint, "checkpoint does not hold parameter '" + name + "'");
      }
      std::copy(ck.tensors[k].value.data().begin(), ck.tensors[k].value.data().end(), t.data().begin());
      if (moments) (*moments)[k] = ck.tensors[k].moments;
      ++k;
    });
    if (k != ck.tensors.size()) fail(ErrorCode::CorruptCheckpoint, "checkpoint holds unexpected extra tensors");
  }

 private:
  void clip_gradients(const std::vector<Tensor*>& tensors) const {
    if (config_.grad_clip <= 0.0) return;
    double sq = 0.0;
    for (const Tensor* t : tensors)
      for (double g : t->grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= config_.grad_clip) return;
    const double factor = config_.grad_clip / norm;
    for (Tensor* t : tensors)
      if (t->has_grad())
        for (double& g : t->mutable_grad()) g *= factor;
  }

  TrainConfig config_;
  ModelConfig model_;
  Dataset data_;
  ModelParams params_;
  std::vector<AdamMoments> moments_;
  std::vector<Segment> segments_;
  std::optional<AUWeights> au_weights_;
  std::uint64_t epoch_ = 0;
  std::uint64_t step_ = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

inline TrainResult train(const TrainConfig& config, const Dataset& data) {
  Trainer t(config, data);
  auto log = t.train();
  return {std::move(t.params()), std::move(log)};
}

/// Model described by a checkpoint, restored over the features available in `registry`.
struct LoadedModel {
  TrainConfig train_config;
  ModelConfig config;
  ModelParams params;
};

inline LoadedModel load_model(const Checkpoint& ck, const FeatureRegistry& registry) {
  LoadedModel m;
  m.train_config = parse_train_config(ck.config_text);
  if (m.train_config.hash() != ck.config_hash) fail(ErrorCode::CorruptCheckpoint, "embedded configuration does not match its hash");
  m.config = make_model_config(m.train_config, registry);
  m.params = init_model(m.config, m.train_config.seed);
  Trainer::restore_tensors(m.params, ck, nullptr);
  return m;
}

}  // namespace mmaffect
