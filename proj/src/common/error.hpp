#pragma once

#include <stdexcept>
#include <string>

namespace fge {

// Error taxonomy shared by the C++ core and the C API (see include/fge.h).
enum class ErrorCode {
  InvalidArg = 1,
  ShapeMismatch,
  DegenerateNorm,
  NotScalar,
  Io,
  MalformedHeader,
  EmptyPrompt,
  BadResolution,
  BatchTooSmall,
  LayerSetMismatch,
  ZeroGradient,
  UnknownSource,
  DimMismatch,
  BadQuality,
  RankDeficient,
  StageFailure,
  ConfigError,
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArg: return "InvalidArg";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateNorm: return "DegenerateNorm";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::BadResolution: return "BadResolution";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::LayerSetMismatch: return "LayerSetMismatch";
    case ErrorCode::ZeroGradient: return "ZeroGradient";
    case ErrorCode::UnknownSource: return "UnknownSource";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::BadQuality: return "BadQuality";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::StageFailure: return "StageFailure";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

}  // namespace fge
