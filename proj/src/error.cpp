#include "sllab/error.hpp"

namespace sllab {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidDimension: return "invalid-dimension";
    case ErrorKind::kDegenerateTilt: return "degenerate-tilt";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kDimensionTooLarge: return "dimension-too-large";
    case ErrorKind::kConstructionFailed: return "construction-failed";
    case ErrorKind::kInvalidScale: return "invalid-scale";
    case ErrorKind::kScheduleIntegrity: return "schedule-integrity";
    case ErrorKind::kEmptyEnsemble: return "empty-ensemble";
    case ErrorKind::kInvalidH: return "invalid-h";
    case ErrorKind::kGridBackendUnsupported: return "grid-backend-unsupported";
    case ErrorKind::kPreconditionViolation: return "precondition-violation";
    case ErrorKind::kHypothesisViolation: return "hypothesis-violation";
    case ErrorKind::kResolution: return "resolution";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

LabError::LabError(ErrorKind kind, const std::string& message,
                   std::optional<double> value)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      value_(value) {}

}  // namespace sllab
