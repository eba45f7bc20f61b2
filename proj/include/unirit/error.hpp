#pragma once

#include <stdexcept>
#include <string>

namespace unirit {

/// Raised when an input violates an operation's precondition.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a well-formed computation fails (I/O, non-finite values, divergence).
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace unirit
