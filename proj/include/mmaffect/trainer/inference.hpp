#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mmaffect/dataio/dataset.hpp"
#include "mmaffect/metrics.hpp"
#include "mmaffect/model.hpp"

namespace mmaffect {

/**
 * Eval-mode predictions for one whole video, segment by segment in frame
 * order. Frame tasks return [T, out_dim] after finalize_predictions; ERI
 * returns [7], the length-weighted mean of the per-segment predictions.
 */
inline Tensor predict_video(ModelParams& params, const ModelConfig& cfg, const Video& video,
                            std::size_t segment_length = kSegmentLength) {
  const auto segments = segment_video(video, segment_length);
  const std::size_t out = output_dim(cfg.task);
  if (cfg.task == Task::ERI) {
    Tensor mean({out});
    for (const auto& s : segments) {
      Graph g(false);
      const Tensor y = finalize_predictions(cfg.task, forward(g, params, cfg, s.features).value());
      const double w = static_cast<double>(s.length()) / static_cast<double>(video.frames());
      for (std::size_t i = 0; i < out; ++i) mean[i] += w * y[i];
    }
    return mean;
  }
  Tensor result({video.frames(), out});
  for (const auto& s : segments) {
    Graph g(false);
    const Tensor y = finalize_predictions(cfg.task, forward(g, params, cfg, s.features).value());
    std::copy(y.data().begin(), y.data().end(), result.data().begin() + static_cast<std::ptrdiff_t>(s.start_frame * out));
  }
  return result;
}

inline std::vector<const Video*> sorted_by_id(const std::vector<Video>& videos) {
  std::vector<const Video*> order;
  for (const auto& v : videos) order.push_back(&v);
  std::sort(order.begin(), order.end(), [](const Video* a, const Video* b) { return a->id < b->id; });
  return order;
}

/// Scores finalized per-video predictions (aligned with `videos`) over the whole split.
inline EvalReport score_predictions(Task task, const std::vector<const Video*>& videos, const std::vector<Tensor>& preds) {
  EvalReport report;
  report.task = task;
  switch (task) {
    case Task::VA: {
      std::vector<double> p, t;
      std::vector<std::uint8_t> mask;
      for (std::size_t k = 0; k < videos.size(); ++k) {
        const auto& labels = videos[k]->labels;
        for (std::size_t f = 0; f < labels.va().frames.size(); ++f) {
          const bool ok = labels.frame_valid(f);
          mask.push_back(ok);
          report.n_valid += ok;
          for (std::size_t d = 0; d < kVaDims; ++d) {
            p.push_back(preds[k].at(f, d));
            t.push_back(labels.va().frames[f][d]);
          }
        }
      }
      const VaScores s = mean_ccc(p, t, mask);
      report.scores = {{"ccc_valence", s.valence}, {"ccc_arousal", s.arousal}};
      report.aggregate = s.mean;
      break;
    }
    case Task::Expr: {
      std::vector<int> truth, pred;
      for (std::size_t k = 0; k < videos.size(); ++k) {
        const auto& frames = videos[k]->labels.expr().frames;
        for (std::size_t f = 0; f < frames.size(); ++f) {
          truth.push_back(frames[f]);
          std::size_t best = 0;
          for (std::size_t c = 1; c < kExprClasses; ++c)
            if (preds[k].at(f, c) > preds[k].at(f, best)) best = c;
          pred.push_back(static_cast<int>(best));
          report.n_valid += frames[f] != kInvalidLabel;
        }
      }
      const auto f1 = per_class_f1(truth, pred, kExprClasses);
      for (std::size_t c = 0; c < f1.size(); ++c) report.scores.emplace_back("f1_class" + std::to_string(c), f1[c]);
      report.aggregate = mean_of(f1);
      break;
    }
    case Task::AU: {
      std::vector<int> truth;
      std::vector<double> probs;
      for (std::size_t k = 0; k < videos.size(); ++k) {
        const auto& labels = videos[k]->labels;
        for (std::size_t f = 0; f < labels.au().frames.size(); ++f) {
          report.n_valid += labels.frame_valid(f);
          for (std::size_t a = 0; a < kAuCount; ++a) {
            truth.push_back(labels.au().frames[f][a]);
            probs.push_back(preds[k].at(f, a));
          }
        }
      }
      const auto f1 = au_f1(truth, probs, kAuCount);
      for (std::size_t a = 0; a < f1.size(); ++a) report.scores.emplace_back("f1_au" + std::to_string(a), f1[a]);
      report.aggregate = mean_of(f1);
      break;
    }
    case Task::ERI: {
      std::vector<double> truth, pred;
      for (std::size_t k = 0; k < videos.size(); ++k) {
        for (std::size_t d = 0; d < kEriDims; ++d) {
          truth.push_back(videos[k]->labels.eri().values[d]);
          pred.push_back(preds[k][d]);
        }
      }
      report.n_valid = videos.size();
      const auto r = per_dim_pcc(truth, pred, kEriDims);
      for (std::size_t d = 0; d < r.size(); ++d) report.scores.emplace_back("pcc_dim" + std::to_string(d), r[d]);
      report.aggregate = mean_of(r);
      break;
    }
  }
  return report;
}

/// Predicts every video (sorted by id) and scores the concatenation.
inline EvalReport evaluate(ModelParams& params, const ModelConfig& cfg, const std::vector<Video>& videos,
                           std::size_t segment_length = kSegmentLength) {
  const auto order = sorted_by_id(videos);
  std::vector<Tensor> preds;
  for (const Video* v : order) {
    if (v->labels.task() != cfg.task) fail(ErrorCode::TaskMismatch, "video '" + v->id + "' carries labels of another task");
    preds.push_back(predict_video(params, cfg, *v, segment_length));
  }
  return score_predictions(cfg.task, order, preds);
}

}  // namespace mmaffect
