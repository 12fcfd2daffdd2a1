#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segmap {

enum class ErrorCode {
  EmptyCloud,
  NotSymmetric,
  InvalidTransform,
  InvalidArgument,
  DegenerateSegment,
  DegenerateConfiguration,
  DegenerateHull,
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  BadChecksum,
  MissingTensor,
  ShapeMismatch,
  UnknownArchitecture,
  InvalidWeights,
  EmptyOriginal,
  DuplicateNode,
  MissingNode,
  NonSpdInformation,
  DisconnectedGauge,
  MalformedLine,
  TruncatedRecord,
  IoError,
  InvalidConfig,
  DegenerateLabels,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::InvalidTransform: return "InvalidTransform";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateSegment: return "DegenerateSegment";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::DegenerateHull: return "DegenerateHull";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::BadChecksum: return "BadChecksum";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownArchitecture: return "UnknownArchitecture";
    case ErrorCode::InvalidWeights: return "InvalidWeights";
    case ErrorCode::EmptyOriginal: return "EmptyOriginal";
    case ErrorCode::DuplicateNode: return "DuplicateNode";
    case ErrorCode::MissingNode: return "MissingNode";
    case ErrorCode::NonSpdInformation: return "NonSpdInformation";
    case ErrorCode::DisconnectedGauge: return "DisconnectedGauge";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::TruncatedRecord: return "TruncatedRecord";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace segmap
