#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace twinfuse {

enum class ErrorCode {
  // geometry
  NonPositiveDepth,
  OutOfBounds,
  BehindCamera,
  ZeroDisparity,
  ResolutionMismatch,
  InvalidArgument,
  // registration / optimization
  DegenerateConfiguration,
  NoConsensus,
  DisconnectedGraph,
  SingularNormalEquations,
  // store
  StorageFull,
  ChecksumMismatch,
  NotFound,
  CorruptRecord,
  InvalidRegion,
  UnreadableLog,
  IoError,
  // protocol
  BadMagic,
  UnsupportedVersion,
  UnknownKind,
  MalformedPayload,
  NotReady,
  ConnectionLost,
  // defect / eval
  NoValidDepth,
  InsufficientPoints,
  ParseError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::ZeroDisparity: return "ZeroDisparity";
    case ErrorCode::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::SingularNormalEquations: return "SingularNormalEquations";
    case ErrorCode::StorageFull: return "StorageFull";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::InvalidRegion: return "InvalidRegion";
    case ErrorCode::UnreadableLog: return "UnreadableLog";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::UnknownKind: return "UnknownKind";
    case ErrorCode::MalformedPayload: return "MalformedPayload";
    case ErrorCode::NotReady: return "NotReady";
    case ErrorCode::ConnectionLost: return "ConnectionLost";
    case ErrorCode::NoValidDepth: return "NoValidDepth";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

inline std::optional<ErrorCode> error_code_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::ParseError); ++i)
    if (to_string(static_cast<ErrorCode>(i)) == s) return static_cast<ErrorCode>(i);
  return std::nullopt;
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace twinfuse
