#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfusion {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad schema, unknown level, ragged CSV, bad config.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a documented precondition (sizes, ranges).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations, diverged training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  NotPositiveDefinite(std::size_t pivot, double value)
      : NumericalError("matrix is not positive definite (pivot " + std::to_string(pivot) +
                       ", value " + std::to_string(value) + ")"),
        pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

}  // namespace mfusion
