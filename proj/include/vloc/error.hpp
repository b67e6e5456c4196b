#ifndef VLOC_ERROR_HPP_
#define VLOC_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace vloc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes handed to an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by an op, divergence, or a failed gradient check.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Degenerate or non-unit quaternions, non-orthonormal rotations.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or incompatible checkpoints.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed dataset files.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace vloc

#endif  // VLOC_ERROR_HPP_
