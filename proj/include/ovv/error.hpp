#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ovv {

// Coarse error families. The CLI maps each one to a distinct exit code and
// prints the name so callers can branch on it.
enum class ErrorCategory {
  invalid_argument,
  shape_mismatch,
  non_finite,
  format,
  io,
  data,
  config,
};

constexpr std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::invalid_argument: return "invalid_argument";
    case ErrorCategory::shape_mismatch: return "shape_mismatch";
    case ErrorCategory::non_finite: return "non_finite";
    case ErrorCategory::format: return "format";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
    case ErrorCategory::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace ovv
