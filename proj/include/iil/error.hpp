#pragma once

#include <stdexcept>
#include <string>

namespace iil {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched or empty shapes, out-of-range indices.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A monomial input was <= 0. Usually means the input shift was skipped.
class PositivityError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (IDX, checkpoint, JSON artifacts).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace iil
