#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmrep {

// Every failure surfaced by the library carries a machine-parsable category.
enum class ErrorCategory {
  kContract,       // caller broke a precondition (dims, shapes, config)
  kZeroVector,     // cosine or normalization of an all-zero vector
  kUndefinedMetric,
  kDataIntegrity,  // dangling references inside a corpus
  kIntegrity,      // corrupt or truncated file
  kStaleDelta,
  kDivergence,
  kIo,
  kBackpressure,
};

std::string_view to_string(ErrorCategory category);

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

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCategory::kContract, message);
}

}  // namespace mmrep
