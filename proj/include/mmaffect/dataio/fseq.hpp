#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

#include "mmaffect/core.hpp"
#include "mmaffect/dataio/binary.hpp"
#include "mmaffect/dataio/files.hpp"

namespace mmaffect::io {

/*
 * FSEQ layout (all integers little-endian):
 *   "FSEQ1"                       5 bytes
 *   header length                 u32
 *   header                        UTF-8 JSON {video_id, feature_name, modality, T, D}
 *   payload                       T * D float32, row-major
 */
inline constexpr std::string_view kFseqMagic = "FSEQ1";

struct FseqHeader {
  std::string video_id;
  std::string feature_name;
  Modality modality = Modality::Visual;
  std::size_t frames = 0;
  std::size_t dim = 0;
};

inline std::string encode_fseq(const FeatureSequence& seq) {
  validate_sequence(seq);
  nlohmann::ordered_json header;
  header["video_id"] = seq.video_id;
  header["feature_name"] = seq.descriptor.name;
  header["modality"] = std::string(to_string(seq.descriptor.modality));
  header["T"] = seq.frames();
  header["D"] = seq.descriptor.dim;
  const std::string text = header.dump();
  ByteWriter w;
  w.bytes(kFseqMagic);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (double v : seq.values.data()) w.f32(static_cast<float>(v));
  return w.take();
}

inline FseqHeader parse_fseq_header(ByteReader& r) {
  nlohmann::json j;
  const std::uint32_t len = r.u32();
  const std::string_view text = r.bytes(len);
  try {
    j = nlohmann::json::parse(text);
    FseqHeader h;
    h.video_id = j.at("video_id").get<std::string>();
    h.feature_name = j.at("feature_name").get<std::string>();
    h.modality = parse_modality(j.at("modality").get<std::string>());
    h.frames = j.at("T").get<std::size_t>();
    h.dim = j.at("D").get<std::size_t>();
    return h;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::HeaderMismatch, std::string("malformed FSEQ header: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::HeaderMismatch, e.what());
  }
}

/// Decodes and checks the header against `registry` (name, modality, dim).
inline FeatureSequence decode_fseq(std::string_view bytes, const FeatureRegistry& registry) {
  if (bytes.size() < kFseqMagic.size() || bytes.substr(0, kFseqMagic.size()) != kFseqMagic) {
    fail(ErrorCode::BadMagic, "not an FSEQ1 file");
  }
  ByteReader r(bytes.substr(kFseqMagic.size()), ErrorCode::TruncatedPayload);
  const FseqHeader h = parse_fseq_header(r);
  const FeatureDescriptor* d = registry.find(h.feature_name);
  if (!d) fail(ErrorCode::HeaderMismatch, "feature '" + h.feature_name + "' is not registered");
  if (d->dim != h.dim || d->modality != h.modality) {
    fail(ErrorCode::HeaderMismatch, "header declares " + h.feature_name + " with D=" + std::to_string(h.dim) +
                                        ", registry says D=" + std::to_string(d->dim));
  }
  if (h.frames == 0) fail(ErrorCode::EmptySequence, "FSEQ file has no frames");
  const std::size_t count = h.frames * h.dim;
  if (r.remaining() < 4 * count) {
    fail(ErrorCode::TruncatedPayload, "payload has " + std::to_string(r.remaining()) + " bytes, expected " +
                                          std::to_string(4 * count));
  }
  if (r.remaining() > 4 * count) fail(ErrorCode::HeaderMismatch, "payload longer than header dimensions");
  FeatureSequence seq{*d, h.video_id, Tensor({h.frames, h.dim}), std::nullopt};
  for (double& v : seq.values.data()) v = static_cast<double>(r.f32());
  validate_sequence(seq);
  return seq;
}

inline void write_fseq(const FeatureSequence& seq, const std::filesystem::path& path) {
  write_file(path, encode_fseq(seq));
}

inline FeatureSequence read_fseq(const std::filesystem::path& path, const FeatureRegistry& registry) {
  return decode_fseq(read_file(path), registry);
}

}  // namespace mmaffect::io
