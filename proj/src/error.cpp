#include "mba/error.hpp"

namespace mba {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kDegenerateRotationSeed: return "DEGENERATE_ROTATION_SEED";
    case ErrorCode::kEmptyResidualSet: return "EMPTY_RESIDUAL_SET";
    case ErrorCode::kNoValidSamples: return "NO_VALID_SAMPLES";
    case ErrorCode::kInsufficientCalibrationPoints: return "INSUFFICIENT_CALIBRATION_POINTS";
    case ErrorCode::kDegenerateConfiguration: return "DEGENERATE_CONFIGURATION";
    case ErrorCode::kTwoViewFailure: return "TWO_VIEW_FAILURE";
    case ErrorCode::kScaleResolutionFailure: return "SCALE_RESOLUTION_FAILURE";
    case ErrorCode::kRegistrationFailure: return "REGISTRATION_FAILURE";
    case ErrorCode::kAllSubgraphsEmpty: return "ALL_SUBGRAPHS_EMPTY";
    case ErrorCode::kQueryUnreachable: return "QUERY_UNREACHABLE";
    case ErrorCode::kNoValidHypothesis: return "NO_VALID_HYPOTHESIS";
    case ErrorCode::kInsufficientFrames: return "INSUFFICIENT_FRAMES";
    case ErrorCode::kDegenerateTrajectory: return "DEGENERATE_TRAJECTORY";
    case ErrorCode::kConfigInfeasible: return "CONFIG_INFEASIBLE";
    case ErrorCode::kBadMagic: return "BAD_MAGIC";
    case ErrorCode::kTruncatedFile: return "TRUNCATED_FILE";
    case ErrorCode::kTrailingData: return "TRAILING_DATA";
    case ErrorCode::kUnsupportedVersion: return "UNSUPPORTED_VERSION";
    case ErrorCode::kDimensionOverflow: return "DIMENSION_OVERFLOW";
    case ErrorCode::kConfidenceOutOfRange: return "CONFIDENCE_OUT_OF_RANGE";
    case ErrorCode::kIoNotFound: return "IO_NOT_FOUND";
    case ErrorCode::kIoError: return "IO_ERROR";
    case ErrorCode::kParseError: return "PARSE_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace mba
