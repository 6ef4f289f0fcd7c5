#pragma once

#include <stdexcept>
#include <string>

namespace incopt {

enum class ErrorKind {
  // graph loading / validation
  DanglingEndpoint,
  DuplicateEdge,
  SelfLoop,
  DimMismatch,
  NonFinite,
  ParseError,
  IoError,
  // argument / state validation
  OutOfRange,
  InvalidConfig,
  ShapeMismatch,
  NegativeTreatment,
  // training
  EmptyBatch,
  InsufficientData,
  // persistence
  VersionMismatch,
  CorruptFile,
  // allocation
  InfeasibleBudget,
  TooLarge,
  NonIntegerCosts,
  // evaluation
  LengthMismatch,
  Empty,
  BadTreatmentPair,
  SetMismatch,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::DanglingEndpoint: return "DanglingEndpoint";
    case ErrorKind::DuplicateEdge: return "DuplicateEdge";
    case ErrorKind::SelfLoop: return "SelfLoop";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NegativeTreatment: return "NegativeTreatment";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorKind::TooLarge: return "TooLarge";
    case ErrorKind::NonIntegerCosts: return "NonIntegerCosts";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::Empty: return "Empty";
    case ErrorKind::BadTreatmentPair: return "BadTreatmentPair";
    case ErrorKind::SetMismatch: return "SetMismatch";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

}  // namespace incopt
