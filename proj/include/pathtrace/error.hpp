#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pathtrace {

enum class ErrorCode {
  // graph operations
  AllZeroWeights,
  EmptyInput,
  MixedMeta,
  EmptyAfterPrune,
  InvalidGraph,
  // serialization
  FormatError,
  VersionError,
  // similarity
  NotComparable,
  DegenerateGraphs,
  MissingPath,
  MissingPair,
  DuplicateSet,
  // tracer
  TokenOutOfRange,
  EmptyPrompt,
  NoActiveFeatures,
  InvalidModel,
  // corpus
  CorpusShapeError,
  FormatViolation,
  AlignmentError,
  // harness
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllZeroWeights: return "AllZeroWeights";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MixedMeta: return "MixedMeta";
    case ErrorCode::EmptyAfterPrune: return "EmptyAfterPrune";
    case ErrorCode::InvalidGraph: return "InvalidGraph";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::VersionError: return "VersionError";
    case ErrorCode::NotComparable: return "NotComparable";
    case ErrorCode::DegenerateGraphs: return "DegenerateGraphs";
    case ErrorCode::MissingPath: return "MissingPath";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::DuplicateSet: return "DuplicateSet";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::NoActiveFeatures: return "NoActiveFeatures";
    case ErrorCode::InvalidModel: return "InvalidModel";
    case ErrorCode::CorpusShapeError: return "CorpusShapeError";
    case ErrorCode::FormatViolation: return "FormatViolation";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Errors raised because the caller's input is malformed or inconsistent, as
// opposed to a defect in this library. The CLI maps these to exit code 2.
inline bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::InvalidGraph:
      return false;
    default:
      return true;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the error-code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

// Malformed serialized input; carries the 1-based line and column of the fault.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, std::size_t column, const std::string& message)
      : Error(ErrorCode::FormatError,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                  message),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace pathtrace
