#pragma once

#include <stdexcept>
#include <string>

namespace fblab {

enum class ErrorCode {
  kInvalidResolution,
  kInvalidDomain,
  kInvalidExponent,
  kInvalidSpec,
  kShapeMismatch,
  kUnsupportedGamma,
  kBorderlineRegime,
  kNonConvergence,
  kNumericalFailure,
  kInsufficientScales,
  kNoPositivePhase,
  kInvalidLevel,
  kConfig,
  kIo,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidResolution: return "invalid-resolution";
    case ErrorCode::kInvalidDomain: return "invalid-domain";
    case ErrorCode::kInvalidExponent: return "invalid-exponent";
    case ErrorCode::kInvalidSpec: return "invalid-spec";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kUnsupportedGamma: return "unsupported-for-discontinuous-potential";
    case ErrorCode::kBorderlineRegime: return "borderline-regime";
    case ErrorCode::kNonConvergence: return "non-convergence";
    case ErrorCode::kNumericalFailure: return "numerical-failure";
    case ErrorCode::kInsufficientScales: return "insufficient-scales";
    case ErrorCode::kNoPositivePhase: return "no-positive-phase";
    case ErrorCode::kInvalidLevel: return "invalid-level";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

/// Exception carrying a machine-readable error category.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fblab
