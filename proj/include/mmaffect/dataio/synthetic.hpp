#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "mmaffect/autodiff/ops.hpp"
#include "mmaffect/dataio/dataset.hpp"

namespace mmaffect {

/// Stand-in for real extractor features: two small streams, one per modality.
inline FeatureRegistry synthetic_registry() {
  return FeatureRegistry{{"SynthAudio", Modality::Audio, 24}, {"SynthVisual", Modality::Visual, 32}};
}

struct SyntheticSpec {
  std::size_t n_videos = 8;
  std::size_t t_min = 576;
  std::size_t t_max = 624;
  FeatureRegistry registry = synthetic_registry();
  Task task = Task::VA;
  std::uint64_t seed = 0;
  double invalid_rate = 0.02;  // fraction of frames left unannotated (frame tasks)
  double noise = 0.05;
};

/// Per-frame and per-video latent state behind one generated video.
struct SyntheticLatents {
  static constexpr std::size_t kFrameLatents = 6;
  static constexpr std::size_t kVideoLatents = 4;

  std::vector<std::array<double, kFrameLatents>> z;  // z[t]; z[t][2..3] = 0.9 (cos, sin) of phase[t]
  std::vector<double> phase;
  std::array<double, kVideoLatents> video{};
};

namespace detail {

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline SyntheticLatents draw_latents(std::size_t frames, CounterRng& rng) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  SyntheticLatents lat;
  lat.z.resize(frames);
  lat.phase.resize(frames);
  for (std::size_t j = 0; j < SyntheticLatents::kFrameLatents; ++j) {
    if (j == 2 || j == 3) continue;
    std::array<double, 3> amp{}, period{}, offset{};
    double amp_total = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      amp[r] = rng.uniform(0.5, 1.0);
      period[r] = rng.uniform(30.0, 200.0);
      offset[r] = rng.uniform(0.0, two_pi);
      amp_total += amp[r];
    }
    for (std::size_t t = 0; t < frames; ++t) {
      double s = 0.0;
      for (std::size_t r = 0; r < 3; ++r) s += amp[r] * std::sin(two_pi * static_cast<double>(t) / period[r] + offset[r]);
      lat.z[t][j] = 0.9 * s / amp_total;
    }
  }
  const double start = rng.uniform(0.0, two_pi);
  const double direction = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double period = rng.uniform(60.0, 140.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const double theta = start + direction * two_pi * static_cast<double>(t) / period;
    lat.phase[t] = std::fmod(std::fmod(theta, two_pi) + two_pi, two_pi);
    lat.z[t][2] = 0.9 * std::cos(theta);
    lat.z[t][3] = 0.9 * std::sin(theta);
  }
  for (double& m : lat.video) m = rng.uniform(-1.0, 1.0);
  return lat;
}

}  // namespace detail

/**
 * Deterministic synthetic dataset. Every feature stream is a fixed linear
 * mix of the latents plus smooth AR(1) noise; labels are fixed functions of
 * the latents:
 *   va    (z0, z1)
 *   expr  octant of the rotating phase carried by (z2, z3)
 *   au    12 half-space tests w_j . z > b_j
 *   eri   logistic(2 u_c . m) of the per-video latent m
 * Values are rounded to what the on-disk formats store, so a dataset read
 * back from disk equals the generated one.
 */
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_videos == 0 || spec.t_min == 0 || spec.t_max < spec.t_min || spec.registry.empty()) {
    fail(ErrorCode::InvalidArgument, "synthetic generator needs videos, features and 1 <= t_min <= t_max");
  }
  constexpr std::size_t K = SyntheticLatents::kFrameLatents;
  constexpr std::size_t M = SyntheticLatents::kVideoLatents;
  CounterRng ds = CounterRng(spec.seed).derive("dataset");

  struct Mixing {
    std::vector<double> frame, video, offset;  // D x K, D x M, D
  };
  std::vector<Mixing> mixing;
  for (const auto& d : spec.registry) {
    Mixing m;
    for (std::size_t i = 0; i < d.dim * K; ++i) m.frame.push_back(0.6 * ds.normal());
    for (std::size_t i = 0; i < d.dim * M; ++i) m.video.push_back(0.6 * ds.normal());
    for (std::size_t i = 0; i < d.dim; ++i) m.offset.push_back(ds.uniform(-0.2, 0.2));
    mixing.push_back(std::move(m));
  }
  std::array<std::array<double, K>, kAuCount> au_dir{};
  std::array<double, kAuCount> au_bias{};
  for (std::size_t a = 0; a < kAuCount; ++a) {
    double norm = 0.0;
    for (double& w : au_dir[a]) {
      w = ds.normal();
      norm += w * w;
    }
    for (double& w : au_dir[a]) w /= std::sqrt(norm);
    au_bias[a] = ds.uniform(-0.25, 0.25);
  }
  std::array<std::array<double, M>, kEriDims> eri_dir{};
  for (auto& u : eri_dir)
    for (double& w : u) w = ds.normal();

  std::vector<Video> videos;
  for (std::size_t v = 0; v < spec.n_videos; ++v) {
    CounterRng rng = CounterRng(spec.seed).derive("video", v);
    const std::size_t frames = spec.t_min + rng.below(spec.t_max - spec.t_min + 1);
    const SyntheticLatents lat = detail::draw_latents(frames, rng);
    char id[32];
    std::snprintf(id, sizeof id, "vid%03zu", v);

    Video video;
    video.id = id;
    for (std::size_t f = 0; f < spec.registry.size(); ++f) {
      const auto& d = spec.registry[f];
      const auto& mix = mixing[f];
      Tensor values({frames, d.dim});
      std::vector<double> noise(d.dim, 0.0);
      for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t c = 0; c < d.dim; ++c) {
          noise[c] = 0.8 * noise[c] + 0.6 * rng.normal();
          double x = mix.offset[c] + spec.noise * noise[c];
          for (std::size_t j = 0; j < K; ++j) x += mix.frame[c * K + j] * lat.z[t][j];
          for (std::size_t j = 0; j < M; ++j) x += mix.video[c * M + j] * lat.video[j];
          values.at(t, c) = detail::round_f32(x);
        }
      }
      video.features.push_back({d, video.id, std::move(values), std::nullopt});
    }

    auto unannotated = [&] { return spec.invalid_rate > 0.0 && rng.uniform() < spec.invalid_rate; };
    switch (spec.task) {
      case Task::VA: {
        VaLabels l;
        for (std::size_t t = 0; t < frames; ++t) {
          if (unannotated()) l.frames.push_back({kVaInvalid, kVaInvalid});
          else l.frames.push_back({lat.z[t][0], lat.z[t][1]});
        }
        video.labels = l;
        break;
      }
      case Task::Expr: {
        ExprLabels l;
        for (std::size_t t = 0; t < frames; ++t) {
          const int octant = std::min(static_cast<int>(lat.phase[t] / (std::numbers::pi / 4.0)), 7);
          l.frames.push_back(unannotated() ? kInvalidLabel : octant);
        }
        video.labels = l;
        break;
      }
      case Task::AU: {
        AuLabels l;
        for (std::size_t t = 0; t < frames; ++t) {
          std::array<int, kAuCount> f{};
          const bool skip = unannotated();
          for (std::size_t a = 0; a < kAuCount; ++a) {
            double s = 0.0;
            for (std::size_t j = 0; j < K; ++j) s += au_dir[a][j] * lat.z[t][j];
            f[a] = skip ? kInvalidLabel : (s > au_bias[a] ? 1 : 0);
          }
          l.frames.push_back(f);
        }
        video.labels = l;
        break;
      }
      case Task::ERI: {
        EriLabels l;
        for (std::size_t c = 0; c < kEriDims; ++c) {
          double s = 0.0;
          for (std::size_t j = 0; j < M; ++j) s += eri_dir[c][j] * lat.video[j];
          l.values[c] = ad::logistic(2.0 * s);
        }
        video.labels = l;
        break;
      }
    }
    // Match what the text label format stores.
    video.labels = io::decode_labels(io::encode_labels(video.labels), spec.task);
    videos.push_back(std::move(video));
  }

  std::vector<std::string> ids;
  for (const auto& v : videos) ids.push_back(v.id);
  const auto is_val = validation_split(ids);
  Dataset data;
  data.task = spec.task;
  data.registry = spec.registry;
  for (std::size_t i = 0; i < videos.size(); ++i) (is_val[i] ? data.val : data.train).push_back(std::move(videos[i]));
  return data;
}

}  // namespace mmaffect
