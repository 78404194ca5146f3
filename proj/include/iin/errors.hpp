#pragma once

#include <stdexcept>
#include <string>

namespace iin {

// Malformed or incompatible on-disk data: bad magic, unsupported version,
// truncated payload, dimensions that disagree with the configuration.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: non-finite loss, diverged training run.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace iin
