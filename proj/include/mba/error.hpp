#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mba {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateRotationSeed,
  kEmptyResidualSet,
  kNoValidSamples,
  kInsufficientCalibrationPoints,
  kDegenerateConfiguration,
  kTwoViewFailure,
  kScaleResolutionFailure,
  kRegistrationFailure,
  kAllSubgraphsEmpty,
  kQueryUnreachable,
  kNoValidHypothesis,
  kInsufficientFrames,
  kDegenerateTrajectory,
  kConfigInfeasible,
  kBadMagic,
  kTruncatedFile,
  kTrailingData,
  kUnsupportedVersion,
  kDimensionOverflow,
  kConfidenceOutOfRange,
  kIoNotFound,
  kIoError,
  kParseError,
};

// Stable, machine-greppable name, e.g. "IO_NOT_FOUND".
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mba
