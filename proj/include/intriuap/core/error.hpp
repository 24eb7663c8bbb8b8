#pragma once

#include <stdexcept>
#include <string>

namespace intriuap {

/// Coarse failure classes. The CLI maps each one to its own exit code.
enum class ErrorClass { BadArgs, Io, Validation, Numeric };

inline const char* error_class_name(ErrorClass c) {
  switch (c) {
    case ErrorClass::BadArgs: return "bad-args";
    case ErrorClass::Io: return "io";
    case ErrorClass::Validation: return "validation";
    case ErrorClass::Numeric: return "numeric-failure";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

/// Shape or geometry incompatibility between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorClass::Validation, "dimension error: " + what) {}
};

/// Parameter outside its admissible domain (negative variance, even median window, ...).
class InvalidParameter : public Error {
 public:
  explicit InvalidParameter(const std::string& what) : Error(ErrorClass::Validation, "invalid parameter: " + what) {}
};

/// Violated caller contract (non-scalar loss, non-linear layer passed as linear, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorClass::Validation, "contract error: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorClass::Io, "io error: " + what) {}
};

/// NaN/Inf or divergence detected in an iterative procedure.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorClass::Numeric, "numeric failure: " + what) {}
};

/// Model validation failures, each reported with a distinct reason.
enum class ModelFault { MissingBlob, ShapeMismatch, Cycle, L1losViolation, BadManifest, BadTopology };

inline const char* model_fault_name(ModelFault f) {
  switch (f) {
    case ModelFault::MissingBlob: return "missing-blob";
    case ModelFault::ShapeMismatch: return "shape-mismatch";
    case ModelFault::Cycle: return "cycle";
    case ModelFault::L1losViolation: return "l1los-violation";
    case ModelFault::BadManifest: return "bad-manifest";
    case ModelFault::BadTopology: return "bad-topology";
  }
  return "unknown";
}

class ModelError : public Error {
 public:
  ModelError(ModelFault fault, const std::string& what)
      : Error(fault == ModelFault::MissingBlob ? ErrorClass::Io : ErrorClass::Validation,
              std::string("model error [") + model_fault_name(fault) + "]: " + what),
        fault_(fault) {}
  ModelFault fault() const noexcept { return fault_; }

 private:
  ModelFault fault_;
};

}  // namespace intriuap
