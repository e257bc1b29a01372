#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hybridtrial {

enum class ErrorCode {
  MissingColumn,
  BadValue,
  EcTreated,
  EmptyGroup,
  TooFewRows,
  OneClass,
  TooFewControls,
  BadFoldCount,
  TooLarge,
  StatisticFailed,
  ReplicationFailures,
  InvalidArgument,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::BadValue: return "BadValue";
    case ErrorCode::EcTreated: return "EcTreated";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::OneClass: return "OneClass";
    case ErrorCode::TooFewControls: return "TooFewControls";
    case ErrorCode::BadFoldCount: return "BadFoldCount";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::StatisticFailed: return "StatisticFailed";
    case ErrorCode::ReplicationFailures: return "ReplicationFailures";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// Every failure the library reports carries one of the codes above so the CLI
// can emit it as machine-readable JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hybridtrial
