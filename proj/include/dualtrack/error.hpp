#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dualtrack {

// Categories are printed by the CLI as the first token of the error line, so
// keep the names stable.
enum class ErrorCategory {
  invalid_argument,
  degenerate_scan,
  shape_mismatch,
  schema_error,
  malformed_meta,
  non_finite,
  generation_error,
  incompatible_checkpoint,
  missing_prerequisite,
  divergence,
  refused,
  io_error,
};

constexpr std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::invalid_argument: return "invalid_argument";
    case ErrorCategory::degenerate_scan: return "degenerate_scan";
    case ErrorCategory::shape_mismatch: return "shape_mismatch";
    case ErrorCategory::schema_error: return "schema_error";
    case ErrorCategory::malformed_meta: return "malformed_meta";
    case ErrorCategory::non_finite: return "non_finite";
    case ErrorCategory::generation_error: return "generation_error";
    case ErrorCategory::incompatible_checkpoint: return "incompatible_checkpoint";
    case ErrorCategory::missing_prerequisite: return "missing_prerequisite";
    case ErrorCategory::divergence: return "divergence";
    case ErrorCategory::refused: return "refused";
    case ErrorCategory::io_error: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

inline void require(bool condition, ErrorCategory category, const std::string& message) {
  if (!condition) fail(category, message);
}

}  // namespace dualtrack
