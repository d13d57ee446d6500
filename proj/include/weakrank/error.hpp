#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace weakrank {

enum class ErrorKind {
  // validation: bad input, configuration or arguments
  InvalidArgument,
  InvalidConfig,
  EmptyVocab,
  InvalidAttributeId,
  ShapeMismatch,
  DimensionMismatch,
  NonFiniteInput,
  ZeroNormRow,
  ZeroVector,
  TooFewRows,
  IdMismatch,
  EmptyEnsemble,
  TopNTooLarge,
  InsufficientCandidates,
  EmptyRelevantSet,
  MissingGroundTruth,
  DuplicateId,
  // runtime: I/O and numerical failures
  IoError,
  CorruptFile,
  VersionMismatch,
  EigenFailure,
  NonFiniteActivation,
  DivergenceDetected,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::EmptyVocab: return "EmptyVocab";
    case ErrorKind::InvalidAttributeId: return "InvalidAttributeId";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::ZeroNormRow: return "ZeroNormRow";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::IdMismatch: return "IdMismatch";
    case ErrorKind::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorKind::TopNTooLarge: return "TopNTooLarge";
    case ErrorKind::InsufficientCandidates: return "InsufficientCandidates";
    case ErrorKind::EmptyRelevantSet: return "EmptyRelevantSet";
    case ErrorKind::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::EigenFailure: return "EigenFailure";
    case ErrorKind::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
  }
  return "Unknown";
}

/// Every failure raised by the library. The kind is the stable, testable part;
/// the message carries context for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// I/O and numerical failures are runtime errors; everything else is the
  /// caller handing us something invalid.
  bool is_runtime() const noexcept {
    switch (kind_) {
      case ErrorKind::IoError:
      case ErrorKind::CorruptFile:
      case ErrorKind::VersionMismatch:
      case ErrorKind::EigenFailure:
      case ErrorKind::NonFiniteActivation:
      case ErrorKind::DivergenceDetected:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace weakrank
