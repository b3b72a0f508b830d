#pragma once

#include <stdexcept>
#include <string>

namespace tforge {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing files.
class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where finite values are required, training divergence (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tforge
