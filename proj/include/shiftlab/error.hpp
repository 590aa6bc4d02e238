#pragma once

#include <stdexcept>
#include <string>

namespace shiftlab {

/// Bad input: malformed files, violated preconditions, invalid configs.
/// The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Failure while computing on valid input (diverged training, NaN objective).
/// The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace shiftlab
