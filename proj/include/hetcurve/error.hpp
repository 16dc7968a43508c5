#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hetcurve {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed input file. `row()` is the 1-based data row (0 for the header).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : Error(row > 0 ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  std::size_t row() const noexcept { return row_; }
  const char* kind() const noexcept override { return "parse"; }

 private:
  std::size_t row_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

/// Propensity value outside (0, 1).
class PositivityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "positivity"; }
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::size_t iterations, double residual)
      : Error(what + " (iterations=" + std::to_string(iterations) +
              ", residual=" + std::to_string(residual) + ")"),
        iterations_(iterations),
        residual_(residual) {}
  /// Message used verbatim; it already carries the diagnostics.
  static ConvergenceError annotated(const std::string& message, std::size_t iterations, double residual) {
    return ConvergenceError(message, iterations, residual, 0);
  }
  std::size_t iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }
  const char* kind() const noexcept override { return "convergence"; }

 private:
  ConvergenceError(const std::string& message, std::size_t iterations, double residual, int)
      : Error(message), iterations_(iterations), residual_(residual) {}

  std::size_t iterations_;
  double residual_;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain"; }
};

}  // namespace hetcurve
