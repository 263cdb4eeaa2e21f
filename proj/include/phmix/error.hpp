#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace phmix {

enum class ErrorCode {
  kNonFiniteState,
  kInvalidCert,
  kAllZeroWeights,
  kDimensionMismatch,
  kNoConvergence,
  kBoundViolation,
  kAssumptionUnmet,
  kEmptyInput,
  kInvalidArgument,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every recoverable failure in the library surfaces as an Error carrying a code
// the harness can record per cell.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

}  // namespace phmix
