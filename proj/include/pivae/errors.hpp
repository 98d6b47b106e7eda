#pragma once

#include <stdexcept>
#include <string>

namespace pivae {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/matrix shapes. Message names the offending node or op.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite values, failed factorizations, diverging optimizations.
struct NumericError : Error {
  using Error::Error;
};

// Invalid configuration. Message carries the field path.
struct ConfigError : Error {
  using Error::Error;
};

// File format and filesystem failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace pivae
