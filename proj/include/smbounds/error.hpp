#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace smb {

/// Failure categories raised by the library. Each maps onto one of the
/// stable process exit codes used by the command-line tool.
enum class ErrorCode {
  // configuration (exit 2)
  BadConfig,
  BadArgument,
  // data (exit 3)
  EmptyInput,
  EmptyCell,
  BadFlag,
  MissingOutcome,
  MissingColumn,
  ParseError,
  TooFewObservations,
  DegenerateSelection,
  DegenerateControlSelection,
  ZeroSelection,
  SupportTooLarge,
  // numerical (exit 4)
  DivideByZero,
  NonIntegrable,
  RootBracketFailure,
  SingularMatrix,
  ZeroDensity,
  BadBandwidth,
  TailSmoothnessViolated,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadArgument: return "BadArgument";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyCell: return "EmptyCell";
    case ErrorCode::BadFlag: return "BadFlag";
    case ErrorCode::MissingOutcome: return "MissingOutcome";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::TooFewObservations: return "TooFewObservations";
    case ErrorCode::DegenerateSelection: return "DegenerateSelection";
    case ErrorCode::DegenerateControlSelection: return "DegenerateControlSelection";
    case ErrorCode::ZeroSelection: return "ZeroSelection";
    case ErrorCode::SupportTooLarge: return "SupportTooLarge";
    case ErrorCode::DivideByZero: return "DivideByZero";
    case ErrorCode::NonIntegrable: return "NonIntegrable";
    case ErrorCode::RootBracketFailure: return "RootBracketFailure";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::ZeroDensity: return "ZeroDensity";
    case ErrorCode::BadBandwidth: return "BadBandwidth";
    case ErrorCode::TailSmoothnessViolated: return "TailSmoothnessViolated";
  }
  return "Unknown";
}

/// Process exit status for an error: 2 config, 3 data, 4 numerical.
constexpr int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadConfig:
    case ErrorCode::BadArgument:
      return 2;
    case ErrorCode::DivideByZero:
    case ErrorCode::NonIntegrable:
    case ErrorCode::RootBracketFailure:
    case ErrorCode::SingularMatrix:
    case ErrorCode::ZeroDensity:
    case ErrorCode::BadBandwidth:
    case ErrorCode::TailSmoothnessViolated:
      return 4;
    default:
      return 3;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int exit_status() const noexcept { return exit_code(code_); }

 private:
  ErrorCode code_;
};

}  // namespace smb
