#include "phmix/error.hpp"

namespace phmix {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonFiniteState: return "NON_FINITE_STATE";
    case ErrorCode::kInvalidCert: return "INVALID_CERT";
    case ErrorCode::kAllZeroWeights: return "ALL_ZERO_WEIGHTS";
    case ErrorCode::kDimensionMismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::kNoConvergence: return "NO_CONVERGENCE";
    case ErrorCode::kBoundViolation: return "BOUND_VIOLATION";
    case ErrorCode::kAssumptionUnmet: return "ASSUMPTION_UNMET";
    case ErrorCode::kEmptyInput: return "EMPTY_INPUT";
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kIo: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace phmix
