#pragma once

#include <stdexcept>
#include <string>

namespace aigen {

/// Raised for malformed user input: bad arguments, files, or configuration.
/// The command line maps it to exit code 2.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numeric invariant breaks at run time (non-finite loss,
/// corrupted checkpoint payload). Exit code 1.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}
}  // namespace detail

}  // namespace aigen
