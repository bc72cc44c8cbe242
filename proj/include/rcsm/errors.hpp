#pragma once

#include <stdexcept>
#include <string>

namespace rcsm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, search region, grid or argument combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image shapes that do not agree.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// File is truncated or not in the expected format.
class CorruptFileError : public DataError {
 public:
  using DataError::DataError;
};

class VersionMismatchError : public DataError {
 public:
  using DataError::DataError;
};

/// A stored network configuration differs from the one the caller demanded.
class ConfigMismatchError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite losses, parameters or activations.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcsm
