#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "mmaffect/autodiff/tensor.hpp"
#include "mmaffect/error.hpp"

namespace mmaffect {

using ad::Tensor;

enum class Modality { Audio, Visual };

inline std::string_view to_string(Modality m) { return m == Modality::Audio ? "audio" : "visual"; }

inline Modality parse_modality(std::string_view s) {
  if (s == "audio" || s == "A") return Modality::Audio;
  if (s == "visual" || s == "V") return Modality::Visual;
  fail(ErrorCode::InvalidArgument, "unknown modality '" + std::string(s) + "'");
}

struct FeatureDescriptor {
  std::string name;
  Modality modality = Modality::Visual;
  std::size_t dim = 1;

  friend bool operator==(const FeatureDescriptor&, const FeatureDescriptor&) = default;
};

/// Ordered set of feature descriptors; iteration order is insertion order.
class FeatureRegistry {
 public:
  FeatureRegistry() = default;
  FeatureRegistry(std::initializer_list<FeatureDescriptor> descriptors) {
    for (const auto& d : descriptors) register_feature(d);
  }

  FeatureRegistry& register_feature(FeatureDescriptor descriptor) {
    if (descriptor.dim < 1) fail(ErrorCode::DimMismatch, "feature '" + descriptor.name + "' has dim 0");
    if (find(descriptor.name)) fail(ErrorCode::DuplicateName, "feature '" + descriptor.name + "' already registered");
    features_.push_back(std::move(descriptor));
    return *this;
  }

  const FeatureDescriptor* find(std::string_view name) const {
    auto it = std::find_if(features_.begin(), features_.end(), [&](const auto& d) { return d.name == name; });
    return it == features_.end() ? nullptr : &*it;
  }

  const FeatureDescriptor& at(std::string_view name) const {
    if (const auto* d = find(name)) return *d;
    fail(ErrorCode::UnknownFeature, "feature '" + std::string(name) + "' is not registered");
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features_.size(); ++i)
      if (features_[i].name == name) return i;
    fail(ErrorCode::UnknownFeature, "feature '" + std::string(name) + "' is not registered");
  }

  /// Registry restricted to `names`, keeping this registry's order.
  FeatureRegistry subset(const std::vector<std::string>& names) const {
    for (const auto& n : names) at(n);
    FeatureRegistry out;
    for (const auto& d : features_)
      if (std::find(names.begin(), names.end(), d.name) != names.end()) out.register_feature(d);
    return out;
  }

  std::size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }
  auto begin() const { return features_.begin(); }
  auto end() const { return features_.end(); }
  const FeatureDescriptor& operator[](std::size_t i) const { return features_[i]; }
  const std::vector<FeatureDescriptor>& descriptors() const { return features_; }

 private:
  std::vector<FeatureDescriptor> features_;
};

/// The ten pretrained-extractor features and their output dimensions.
inline FeatureRegistry extractor_registry() {
  return FeatureRegistry{
      {"IS09", Modality::Audio, 384},     {"CNN14", Modality::Audio, 2048},
      {"VGGish", Modality::Audio, 128},   {"eGeMAPS", Modality::Audio, 88},
      {"DeepSpectrum", Modality::Audio, 1024}, {"EAC", Modality::Visual, 2048},
      {"FAU", Modality::Visual, 17},      {"ResNet18", Modality::Visual, 512},
      {"POSTER", Modality::Visual, 768},  {"POSTER2", Modality::Visual, 768},
  };
}

/// One feature stream of one video; values is T x D, one row per frame.
struct FeatureSequence {
  FeatureDescriptor descriptor;
  std::string video_id;
  Tensor values;
  std::optional<double> frame_rate_hint;

  std::size_t frames() const { return values.rank() == 2 ? values.dim(0) : 0; }
};

inline void validate_sequence(const FeatureSequence& seq) {
  const Tensor& v = seq.values;
  if (v.rank() != 2 || v.dim(0) < 1) {
    fail(ErrorCode::EmptySequence, "sequence '" + seq.video_id + "/" + seq.descriptor.name + "' has no frames");
  }
  if (v.dim(1) != seq.descriptor.dim) {
    fail(ErrorCode::DimMismatch, "sequence '" + seq.descriptor.name + "' rows have " + std::to_string(v.dim(1)) +
                                     " values, descriptor says " + std::to_string(seq.descriptor.dim));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      fail(ErrorCode::NonFinite, "sequence '" + seq.descriptor.name + "' frame " + std::to_string(i / v.dim(1)) +
                                     " holds a non-finite value");
    }
  }
  if (seq.frame_rate_hint && !(*seq.frame_rate_hint > 0.0)) {
    fail(ErrorCode::InvalidArgument, "frame rate hint must be positive");
  }
}

/// First `frames` rows of a T x D tensor.
inline Tensor take_rows(const Tensor& m, std::size_t begin, std::size_t frames) {
  const std::size_t d = m.dim(1);
  std::vector<double> data(m.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                           m.data().begin() + static_cast<std::ptrdiff_t>((begin + frames) * d));
  return Tensor({frames, d}, std::move(data));
}

/// Truncates every stream of one video to the shortest stream's length.
inline std::vector<FeatureSequence> align_lengths(std::vector<FeatureSequence> seqs) {
  if (seqs.empty()) return seqs;
  std::size_t t_min = seqs.front().frames();
  for (const auto& s : seqs) {
    if (s.video_id != seqs.front().video_id) {
      fail(ErrorCode::MixedVideos, "cannot align '" + s.video_id + "' with '" + seqs.front().video_id + "'");
    }
    if (s.frames() < 1) fail(ErrorCode::EmptySequence, "sequence '" + s.descriptor.name + "' is empty");
    t_min = std::min(t_min, s.frames());
  }
  for (auto& s : seqs) {
    if (s.frames() != t_min) s.values = take_rows(s.values, 0, t_min);
  }
  return seqs;
}

enum class Task { VA, Expr, AU, ERI };

inline constexpr std::size_t kVaDims = 2;
inline constexpr std::size_t kExprClasses = 8;
inline constexpr std::size_t kAuCount = 12;
inline constexpr std::size_t kEriDims = 7;

/// VA frames carrying this value (anything outside [-1, 1]) are unannotated.
inline constexpr double kVaInvalid = -5.0;
/// Expr/AU frames carrying this value are unannotated.
inline constexpr int kInvalidLabel = -1;

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::VA: return "va";
    case Task::Expr: return "expr";
    case Task::AU: return "au";
    case Task::ERI: return "eri";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "va") return Task::VA;
  if (s == "expr") return Task::Expr;
  if (s == "au") return Task::AU;
  if (s == "eri") return Task::ERI;
  fail(ErrorCode::InvalidArgument, "unknown task '" + std::string(s) + "' (expected va, expr, au or eri)");
}

inline std::size_t output_dim(Task t) {
  switch (t) {
    case Task::VA: return kVaDims;
    case Task::Expr: return kExprClasses;
    case Task::AU: return kAuCount;
    case Task::ERI: return kEriDims;
  }
  return 0;
}

inline bool is_frame_task(Task t) { return t != Task::ERI; }

struct VaLabels {
  std::vector<std::array<double, kVaDims>> frames;
};
struct ExprLabels {
  std::vector<int> frames;
};
struct AuLabels {
  std::vector<std::array<int, kAuCount>> frames;
};
struct EriLabels {
  std::array<double, kEriDims> values{};
};

/// Labels of one video (or one segment of it) for exactly one task.
class TaskLabels {
 public:
  using Storage = std::variant<VaLabels, ExprLabels, AuLabels, EriLabels>;

  TaskLabels() = default;
  template <typename L>
    requires std::is_constructible_v<Storage, L>
  TaskLabels(L labels) : storage_(std::move(labels)) {}  // NOLINT(google-explicit-constructor)

  Task task() const { return static_cast<Task>(storage_.index()); }

  const VaLabels& va() const { return get<VaLabels>(Task::VA); }
  const ExprLabels& expr() const { return get<ExprLabels>(Task::Expr); }
  const AuLabels& au() const { return get<AuLabels>(Task::AU); }
  const EriLabels& eri() const { return get<EriLabels>(Task::ERI); }

  /// Frame count for frame-level tasks; nullopt for per-video ERI labels.
  std::optional<std::size_t> frames() const {
    return std::visit(
        [](const auto& l) -> std::optional<std::size_t> {
          if constexpr (std::is_same_v<std::decay_t<decltype(l)>, EriLabels>) {
            return std::nullopt;
          } else {
            return l.frames.size();
          }
        },
        storage_);
  }

  bool frame_valid(std::size_t t) const {
    switch (task()) {
      case Task::VA: {
        const auto& f = va().frames[t];
        return std::abs(f[0]) <= 1.0 && std::abs(f[1]) <= 1.0;
      }
      case Task::Expr: return expr().frames[t] != kInvalidLabel;
      case Task::AU:
        return std::none_of(au().frames[t].begin(), au().frames[t].end(), [](int v) { return v == kInvalidLabel; });
      case Task::ERI: return true;
    }
    return false;
  }

  /// Frames [begin, begin + count); ERI labels are returned unchanged.
  TaskLabels slice(std::size_t begin, std::size_t count) const {
    return std::visit(
        [&](const auto& l) -> TaskLabels {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, EriLabels>) {
            return l;
          } else {
            L out;
            out.frames.assign(l.frames.begin() + static_cast<std::ptrdiff_t>(begin),
                              l.frames.begin() + static_cast<std::ptrdiff_t>(begin + count));
            return out;
          }
        },
        storage_);
  }

  const Storage& storage() const { return storage_; }

 private:
  template <typename L>
  const L& get(Task expected) const {
    if (const auto* p = std::get_if<L>(&storage_)) return *p;
    fail(ErrorCode::TaskMismatch,
         "labels are for task '" + std::string(to_string(task())) + "', not '" + std::string(to_string(expected)) + "'");
  }

  Storage storage_;
};

/// A contiguous window of aligned frames of one video.
struct Segment {
  std::string video_id;
  std::size_t start_frame = 0;
  std::vector<Tensor> features;  // one T' x D_i matrix per registered feature, registry order
  TaskLabels labels;
  std::vector<std::uint8_t> valid_mask;

  std::size_t length() const { return valid_mask.size(); }
};

}  // namespace mmaffect
