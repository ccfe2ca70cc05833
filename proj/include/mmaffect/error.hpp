#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmaffect {

enum class ErrorCode {
  DuplicateName,
  UnknownFeature,
  DimMismatch,
  NonFinite,
  EmptySequence,
  MixedVideos,
  ShapeMismatch,
  NonScalarLoss,
  InvalidProbability,
  InvalidArgument,
  OddModelDim,
  LengthMismatch,
  NoValidFrames,
  ZeroOccurrence,
  TooShort,
  BadMagic,
  HeaderMismatch,
  TruncatedPayload,
  BadLabels,
  EmptyVideo,
  CorruptCheckpoint,
  ConfigHashMismatch,
  InvalidConfig,
  TaskMismatch,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::UnknownFeature: return "UnknownFeature";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::MixedVideos: return "MixedVideos";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OddModelDim: return "OddModelDim";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NoValidFrames: return "NoValidFrames";
    case ErrorCode::ZeroOccurrence: return "ZeroOccurrence";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::BadLabels: return "BadLabels";
    case ErrorCode::EmptyVideo: return "EmptyVideo";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::ConfigHashMismatch: return "ConfigHashMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::TaskMismatch: return "TaskMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace mmaffect
