#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace harch {

// Every failure the library reports maps onto one of these kinds. The CLI
// turns the kind's category into a process exit code.
enum class ErrorKind {
  // sense_hierarchy
  kHasRealChildren,
  kUnknownSenseName,
  kNotABijection,
  kWrongCount,
  kMappingUnavailable,
  kLevelMismatch,
  // corpus
  kMissingColumn,
  kUnknownLanguage,
  kEmptyCorpus,
  kAllZero,
  kEmptyArgument,
  kMalformedInput,
  // model / training
  kShapeMismatch,
  kNonFinite,
  kUnknownEncoder,
  kEmptyTrainSplit,
  kNonFiniteLoss,
  kBadCheckpoint,
  // evaluation
  kUnnormalized,
  kEmptySplit,
  kMismatchedReports,
  // prompting
  kMissingConnectiveMap,
  kInsufficientExamples,
  kTransportError,
  kExhaustedRetries,
  // configuration / io
  kConfig,
  kIo,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kHasRealChildren: return "HasRealChildren";
    case ErrorKind::kUnknownSenseName: return "UnknownSenseName";
    case ErrorKind::kNotABijection: return "NotABijection";
    case ErrorKind::kWrongCount: return "WrongCount";
    case ErrorKind::kMappingUnavailable: return "MappingUnavailable";
    case ErrorKind::kLevelMismatch: return "LevelMismatch";
    case ErrorKind::kMissingColumn: return "MissingColumn";
    case ErrorKind::kUnknownLanguage: return "UnknownLanguage";
    case ErrorKind::kEmptyCorpus: return "EmptyCorpus";
    case ErrorKind::kAllZero: return "AllZero";
    case ErrorKind::kEmptyArgument: return "EmptyArgument";
    case ErrorKind::kMalformedInput: return "MalformedInput";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kNonFinite: return "NonFinite";
    case ErrorKind::kUnknownEncoder: return "UnknownEncoder";
    case ErrorKind::kEmptyTrainSplit: return "EmptyTrainSplit";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kBadCheckpoint: return "BadCheckpoint";
    case ErrorKind::kUnnormalized: return "Unnormalized";
    case ErrorKind::kEmptySplit: return "EmptySplit";
    case ErrorKind::kMismatchedReports: return "MismatchedReports";
    case ErrorKind::kMissingConnectiveMap: return "MissingConnectiveMap";
    case ErrorKind::kInsufficientExamples: return "InsufficientExamples";
    case ErrorKind::kTransportError: return "TransportError";
    case ErrorKind::kExhaustedRetries: return "ExhaustedRetries";
    case ErrorKind::kConfig: return "ConfigError";
    case ErrorKind::kIo: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace harch
