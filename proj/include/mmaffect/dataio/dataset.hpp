#pragma once

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmaffect/core.hpp"
#include "mmaffect/dataio/fseq.hpp"
#include "mmaffect/dataio/labels.hpp"
#include "mmaffect/rng.hpp"

namespace mmaffect {

inline constexpr std::size_t kSegmentLength = 256;
inline constexpr std::size_t kBatchSize = 128;

/// All aligned feature streams and the labels of one video.
struct Video {
  std::string id;
  std::vector<FeatureSequence> features;  // registry order, equal lengths
  TaskLabels labels;

  std::size_t frames() const { return features.empty() ? 0 : features.front().frames(); }
};

struct Dataset {
  Task task = Task::VA;
  FeatureRegistry registry;
  std::vector<Video> train;
  std::vector<Video> val;
};

/**
 * Non-overlapping windows [0, L), [L, 2L), ...; a trailing partial window is
 * kept at its natural length. valid_mask flags annotated frames.
 */
inline std::vector<Segment> segment_video(const std::string& video_id, const std::vector<Tensor>& features,
                                          const TaskLabels& labels, std::size_t segment_length = kSegmentLength) {
  if (segment_length == 0) fail(ErrorCode::InvalidArgument, "segment length must be positive");
  if (features.empty() || features.front().rank() != 2) fail(ErrorCode::EmptyVideo, "video '" + video_id + "' has no features");
  const std::size_t total = features.front().dim(0);
  for (const auto& f : features) {
    if (f.rank() != 2 || f.dim(0) != total) fail(ErrorCode::LengthMismatch, "features of '" + video_id + "' are not aligned");
  }
  if (auto n = labels.frames(); n && *n != total) {
    fail(ErrorCode::LengthMismatch, "video '" + video_id + "' has " + std::to_string(total) + " frames but " +
                                        std::to_string(*n) + " labels");
  }
  std::vector<Segment> out;
  for (std::size_t start = 0; start < total; start += segment_length) {
    const std::size_t len = std::min(segment_length, total - start);
    Segment s;
    s.video_id = video_id;
    s.start_frame = start;
    for (const auto& f : features) s.features.push_back(take_rows(f, start, len));
    s.labels = labels.slice(start, len);
    s.valid_mask.resize(len);
    for (std::size_t k = 0; k < len; ++k) s.valid_mask[k] = labels.frame_valid(start + k) ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Segment> segment_video(const Video& video, std::size_t segment_length = kSegmentLength) {
  if (video.frames() == 0) fail(ErrorCode::EmptyVideo, "video '" + video.id + "' has no frames");
  std::vector<Tensor> features;
  for (const auto& f : video.features) features.push_back(f.values);
  return segment_video(video.id, features, video.labels, segment_length);
}

/**
 * Shuffles segment indices, groups them by length (no padding inside a
 * batch), chunks each group into batches of at most batch_size, then
 * shuffles the batch order. Fully determined by the RNG state.
 */
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const Segment> segments, std::size_t batch_size,
                                                          CounterRng rng) {
  if (batch_size == 0) fail(ErrorCode::InvalidArgument, "batch size must be at least 1");
  std::vector<std::size_t> order(segments.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::size_t> lengths;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t idx : order) {
    const std::size_t len = segments[idx].length();
    auto it = std::find(lengths.begin(), lengths.end(), len);
    if (it == lengths.end()) {
      lengths.push_back(len);
      groups.emplace_back();
      it = lengths.end() - 1;
    }
    groups[static_cast<std::size_t>(it - lengths.begin())].push_back(idx);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (const auto& group : groups) {
    for (std::size_t b = 0; b < group.size(); b += batch_size) {
      batches.emplace_back(group.begin() + static_cast<std::ptrdiff_t>(b),
                           group.begin() + static_cast<std::ptrdiff_t>(std::min(group.size(), b + batch_size)));
    }
  }
  rng.shuffle(batches);
  return batches;
}

/// Assigns ceil(20%) of videos (at least one when there are two or more) to
/// validation: those with the smallest FNV-1a hash of their id.
inline std::vector<bool> validation_split(const std::vector<std::string>& ids) {
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = fnv1a(ids[a]), hb = fnv1a(ids[b]);
    return ha != hb ? ha < hb : ids[a] < ids[b];
  });
  const std::size_t n_val = ids.size() < 2 ? 0 : (ids.size() + 4) / 5;
  std::vector<bool> is_val(ids.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  return is_val;
}

namespace io {

/*
 * Directory layout:
 *   <root>/<task>/features.json                      registry, in order
 *   <root>/<task>/<split>/<video_id>/<feature>.fseq
 *   <root>/<task>/<split>/<video_id>.labels
 */
inline std::string encode_registry(const FeatureRegistry& registry) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& d : registry) {
    nlohmann::ordered_json j;
    j["name"] = d.name;
    j["modality"] = std::string(to_string(d.modality));
    j["dim"] = d.dim;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

inline FeatureRegistry decode_registry(std::string_view text) {
  FeatureRegistry registry;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      registry.register_feature(
          {j.at("name").get<std::string>(), parse_modality(j.at("modality").get<std::string>()), j.at("dim").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::HeaderMismatch, std::string("malformed features.json: ") + e.what());
  }
  return registry;
}

inline void write_video(const Video& video, const fs::path& split_dir) {
  for (const auto& f : video.features) write_fseq(f, split_dir / video.id / (f.descriptor.name + ".fseq"));
  write_labels(video.labels, split_dir / (video.id + ".labels"));
}

inline void write_dataset(const Dataset& data, const fs::path& root) {
  const fs::path task_dir = root / std::string(to_string(data.task));
  write_file(task_dir / "features.json", encode_registry(data.registry));
  for (const auto& v : data.train) write_video(v, task_dir / "train");
  for (const auto& v : data.val) write_video(v, task_dir / "val");
}

/// Reads one video; streams are aligned and labels truncated to the common length.
inline Video read_video(const fs::path& split_dir, const std::string& id, const FeatureRegistry& registry, Task task) {
  Video v;
  v.id = id;
  std::vector<FeatureSequence> seqs;
  for (const auto& d : registry) {
    auto seq = read_fseq(split_dir / id / (d.name + ".fseq"), registry);
    if (seq.video_id != id) fail(ErrorCode::MixedVideos, "file for '" + id + "' declares video '" + seq.video_id + "'");
    seqs.push_back(std::move(seq));
  }
  v.features = align_lengths(std::move(seqs));
  v.labels = read_labels(split_dir / (id + ".labels"), task);
  if (auto n = v.labels.frames()) {
    if (*n == 0) fail(ErrorCode::EmptyVideo, "video '" + id + "' has no labelled frames");
    const std::size_t t = std::min(*n, v.frames());
    for (auto& f : v.features)
      if (f.frames() != t) f.values = take_rows(f.values, 0, t);
    if (*n != t) v.labels = v.labels.slice(0, t);
  }
  return v;
}

inline std::vector<Video> read_split(const fs::path& split_dir, const FeatureRegistry& registry, Task task) {
  std::vector<std::string> ids;
  if (fs::is_directory(split_dir)) {
    for (const auto& entry : fs::directory_iterator(split_dir))
      if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  std::vector<Video> out;
  for (const auto& id : ids) out.push_back(read_video(split_dir, id, registry, task));
  return out;
}

/// Loads `<root>/<task>`; `features` selects a registry subset (empty = all).
inline Dataset load_dataset(const fs::path& root, Task task, const std::vector<std::string>& features = {}) {
  const fs::path task_dir = root / std::string(to_string(task));
  if (!fs::exists(task_dir / "features.json")) {
    fail(ErrorCode::TaskMismatch, "'" + root.string() + "' holds no " + std::string(to_string(task)) + " data");
  }
  Dataset data;
  data.task = task;
  data.registry = decode_registry(read_file(task_dir / "features.json"));
  if (!features.empty()) data.registry = data.registry.subset(features);
  data.train = read_split(task_dir / "train", data.registry, task);
  data.val = read_split(task_dir / "val", data.registry, task);
  return data;
}

}  // namespace io
}  // namespace mmaffect
