#pragma once

#include <stdexcept>
#include <string>

namespace nrsfm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs whose shapes do not agree (q vs. basis, latent dimension, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values that are not shape problems (N < 4, K > L-3, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure failed: degenerate input, divergence, NaN.
/// `operation()` names the routine that failed so drivers can report it.
class NumericalError : public Error {
 public:
  NumericalError(std::string operation, const std::string& what)
      : Error(operation + ": " + what), operation_(std::move(operation)) {}

  const std::string& operation() const noexcept { return operation_; }

 private:
  std::string operation_;
};

}  // namespace nrsfm
