#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mammo {

enum class ErrorCode {
  UnreadableFile,
  MissingPixelData,
  NonPositiveWidth,
  SchemaMismatch,
  EmptyJoin,
  IoFailure,
  EmptyManifest,
  InsufficientClassMembers,
  InvalidArgument,
  ShapeMismatch,
  MissingTensor,
  TaskMismatch,
  EmptyClass,
  NonFiniteLoss,
  DivergedLoss,
  LengthMismatch,
  SingleClass,
  DegenerateVariance,
  InvalidClass,
  NonFiniteGradient,
  ConfigInvalid,
  StageFailed,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::MissingPixelData: return "MissingPixelData";
    case ErrorCode::NonPositiveWidth: return "NonPositiveWidth";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyJoin: return "EmptyJoin";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::InsufficientClassMembers: return "InsufficientClassMembers";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingTensor: return "MissingTensor";
    case ErrorCode::TaskMismatch: return "TaskMismatch";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::InvalidClass: return "InvalidClass";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::StageFailed: return "StageFailed";
  }
  return "Unknown";
}

}  // namespace mammo
