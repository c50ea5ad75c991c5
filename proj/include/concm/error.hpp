#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace concm {

enum class ErrorKind {
  InvalidInput,
  NoConvergence,
  ShapeError,
  OrderError,
  MissingClass,
  DegenerateEmbedding,
  DimensionTooSmall,
  ParseError,
  SchemaError,
  UnknownClass,
  EmptyAttribute,
  MissingEmbedding,
  AllMasked,
  InsufficientSamples,
  InvalidConfig,
  DegenerateInput,
  InvalidStats,
  DegenerateBatch,
  LabelOutOfRange,
  TrainingDiverged,
  ProtocolViolation,
  UndefinedMetric,
  IoError,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::OrderError: return "OrderError";
    case ErrorKind::MissingClass: return "MissingClass";
    case ErrorKind::DegenerateEmbedding: return "DegenerateEmbedding";
    case ErrorKind::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::EmptyAttribute: return "EmptyAttribute";
    case ErrorKind::MissingEmbedding: return "MissingEmbedding";
    case ErrorKind::AllMasked: return "AllMasked";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::InvalidStats: return "InvalidStats";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::ProtocolViolation: return "ProtocolViolation";
    case ErrorKind::UndefinedMetric: return "UndefinedMetric";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. Every failure path throws this with a kind tag
/// so callers (and the CLI's exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace concm
