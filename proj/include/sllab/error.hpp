#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace sllab {

enum class ErrorKind {
  kInvalidDimension,
  kDegenerateTilt,
  kDivergence,
  kDimensionTooLarge,
  kConstructionFailed,
  kInvalidScale,
  kScheduleIntegrity,
  kEmptyEnsemble,
  kInvalidH,
  kGridBackendUnsupported,
  kPreconditionViolation,
  kHypothesisViolation,
  kResolution,
  kConfig,
  kIo,
};

const char* to_string(ErrorKind kind);

/// Error type used across the lab. `value` carries the numeric payload some
/// kinds need (ESS for degenerate tilts, step index for divergence).
class LabError : public std::runtime_error {
 public:
  LabError(ErrorKind kind, const std::string& message,
           std::optional<double> value = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<double> value() const noexcept { return value_; }

 private:
  ErrorKind kind_;
  std::optional<double> value_;
};

}  // namespace sllab
