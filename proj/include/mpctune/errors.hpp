#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mpctune {

enum class ErrorCode {
  Infeasible,
  NotStronglyConvex,
  MaxIterations,
  DimensionMismatch,
  DegenerateConstraints,
  SingularU,
  SingularMass,
  InvalidArgs,
  AssumptionViolated,
  NumericFailure,
  Config,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::NotStronglyConvex: return "NotStronglyConvex";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateConstraints: return "DegenerateConstraints";
    case ErrorCode::SingularU: return "SingularU";
    case ErrorCode::SingularMass: return "SingularMass";
    case ErrorCode::InvalidArgs: return "InvalidArgs";
    case ErrorCode::AssumptionViolated: return "AssumptionViolated";
    case ErrorCode::NumericFailure: return "NumericFailure";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` tells callers what went wrong.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

  /// Same error with `context` prepended to the message.
  Error with_context(const std::string& context) const { return Error(code_, context + ": " + message_); }

  /// True for failures of the numerics (as opposed to bad input or I/O).
  bool is_numeric() const noexcept {
    switch (code_) {
      case ErrorCode::Infeasible:
      case ErrorCode::NotStronglyConvex:
      case ErrorCode::MaxIterations:
      case ErrorCode::SingularU:
      case ErrorCode::SingularMass:
      case ErrorCode::NumericFailure:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace mpctune
