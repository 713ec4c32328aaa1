#pragma once

#include <stdexcept>
#include <string>

namespace optdesign {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  Inestimable,
  SingularM,
  IrrationalBeta,
  DegenerateDenominator,
  UnsupportedCombination,
  Infeasible,
  SolverFailure,
  ParseError,
  SchemaVersionMismatch,
  SchemaValidation,
  HashMismatch,
  DisconnectedGraph,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::Inestimable: return "Inestimable";
    case ErrorCode::SingularM: return "SingularM";
    case ErrorCode::IrrationalBeta: return "IrrationalBeta";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::UnsupportedCombination: return "UnsupportedCombination";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::SchemaValidation: return "SchemaValidation";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace optdesign
