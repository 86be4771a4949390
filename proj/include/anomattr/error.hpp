#pragma once

#include <stdexcept>
#include <string>

namespace anomattr {

enum class ErrorKind {
  // ingest / preprocess
  MissingColumn,
  UnexpectedColumn,
  UnparseableTimestamp,
  DuplicateTimestamp,
  MultipleGrids,
  EmptyAfterAggregation,
  AlbedoOutOfRange,
  SeriesTooShort,
  TooFewRows,
  AllOutliers,
  // clustering
  KOutOfRange,
  SingleCluster,
  // model
  ShapeMismatch,
  NonFiniteLoss,
  EmptyCluster,
  // thresholding
  TooFewExceedances,
  WindowTooLarge,
  LengthMismatch,
  // attribution
  IndexOutOfRange,
  ModelDataMismatch,
  // evaluation
  SingleClassTraining,
  DegenerateLabels,
  TooFewSamples,
  EmptyInput,
  UnknownFeatureInRanking,
  // general
  InvalidConfig,
  IoFailure,
};

// Exit-code buckets used by the CLI: validation -> 2, numerical -> 3, io -> 4.
enum class ErrorCategory { Validation, Numerical, Io };

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::UnexpectedColumn: return "UnexpectedColumn";
    case ErrorKind::UnparseableTimestamp: return "UnparseableTimestamp";
    case ErrorKind::DuplicateTimestamp: return "DuplicateTimestamp";
    case ErrorKind::MultipleGrids: return "MultipleGrids";
    case ErrorKind::EmptyAfterAggregation: return "EmptyAfterAggregation";
    case ErrorKind::AlbedoOutOfRange: return "AlbedoOutOfRange";
    case ErrorKind::SeriesTooShort: return "SeriesTooShort";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::AllOutliers: return "AllOutliers";
    case ErrorKind::KOutOfRange: return "KOutOfRange";
    case ErrorKind::SingleCluster: return "SingleCluster";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyCluster: return "EmptyCluster";
    case ErrorKind::TooFewExceedances: return "TooFewExceedances";
    case ErrorKind::WindowTooLarge: return "WindowTooLarge";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::ModelDataMismatch: return "ModelDataMismatch";
    case ErrorKind::SingleClassTraining: return "SingleClassTraining";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::UnknownFeatureInRanking: return "UnknownFeatureInRanking";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

inline ErrorCategory error_category(ErrorKind k) {
  switch (k) {
    case ErrorKind::NonFiniteLoss:
      return ErrorCategory::Numerical;
    case ErrorKind::IoFailure:
      return ErrorCategory::Io;
    default:
      return ErrorCategory::Validation;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  ErrorCategory category() const noexcept { return error_category(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace anomattr
