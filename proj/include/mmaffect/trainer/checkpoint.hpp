#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmaffect/autodiff/tensor.hpp"
#include "mmaffect/dataio/binary.hpp"
#include "mmaffect/dataio/files.hpp"
#include "mmaffect/rng.hpp"
#include "mmaffect/trainer/adam.hpp"

namespace mmaffect {

/*
 * Checkpoint layout (little-endian):
 *   "MMCK1"
 *   u32 length + config text (TrainConfig::to_text)
 *   u64 config hash, u64 completed epochs, u64 optimizer steps
 *   u32 tensor count, then per tensor:
 *     u32 length + name, u32 rank, rank x u64 dims,
 *     value, first moment, second moment (each size x f64)
 *   u64 FNV-1a of every preceding byte
 */
inline constexpr std::string_view kCheckpointMagic = "MMCK1";

struct CheckpointTensor {
  std::string name;
  ad::Tensor value;
  AdamMoments moments;
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::vector<CheckpointTensor> tensors;
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(ck.config_text.size()));
  w.bytes(ck.config_text);
  w.u64(ck.config_hash);
  w.u64(ck.epoch);
  w.u64(ck.step);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.moments.m.size() != t.value.size() || t.moments.v.size() != t.value.size()) {
      fail(ErrorCode::ShapeMismatch, "moments of '" + t.name + "' do not match its value");
    }
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) w.u64(d);
    for (double v : t.value.data()) w.f64(v);
    for (double v : t.moments.m) w.f64(v);
    for (double v : t.moments.v) w.f64(v);
  }
  std::string bytes = w.take();
  io::ByteWriter tail;
  tail.u64(fnv1a(bytes));
  return bytes + tail.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 8 || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    fail(ErrorCode::CorruptCheckpoint, "not a checkpoint file");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  io::ByteReader trailer(bytes.substr(bytes.size() - 8), ErrorCode::CorruptCheckpoint);
  if (trailer.u64() != fnv1a(body)) fail(ErrorCode::CorruptCheckpoint, "checksum mismatch (truncated or modified file)");

  io::ByteReader r(body.substr(kCheckpointMagic.size()), ErrorCode::CorruptCheckpoint);
  Checkpoint ck;
  ck.config_text = std::string(r.bytes(r.u32()));
  ck.config_hash = r.u64();
  ck.epoch = r.u64();
  ck.step = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = std::string(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    ad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.u64()));
      if (shape.back() == 0) fail(ErrorCode::CorruptCheckpoint, "tensor '" + t.name + "' has an empty axis");
      n *= shape.back();
    }
    if (n * 24 > r.remaining()) fail(ErrorCode::CorruptCheckpoint, "tensor '" + t.name + "' overruns the file");
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    t.value = ad::Tensor(shape, std::move(data));
    t.moments = AdamMoments(n);
    for (double& v : t.moments.m) v = r.f64();
    for (double& v : t.moments.v) v = r.f64();
    ck.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) fail(ErrorCode::CorruptCheckpoint, "trailing bytes after the last tensor");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  // Write then rename so an interrupted save never leaves a half file behind.
  auto tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, encode_checkpoint(ck));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace mmaffect
