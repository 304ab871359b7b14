#pragma once

#include <stdexcept>
#include <string>

namespace mrd {

// Base for all library errors. The CLI maps subclasses onto exit codes:
// input/usage problems -> 1, numerical/estimation problems -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

class InvalidFrameError : public Error {
 public:
  using Error::Error;
};

// A local fit could not be solved: too few weighted observations or a
// singular weighted Gram matrix. Carries the diagnostics the caller needs
// to report the failure.
class InsufficientLocalDataError : public Error {
 public:
  InsufficientLocalDataError(const std::string& msg, int effective_n,
                             double condition, std::string side = {})
      : Error(msg),
        effective_n(effective_n),
        condition(condition),
        side(std::move(side)) {}

  int effective_n = 0;
  double condition = 0.0;
  std::string side;
};

class KernelUnsuitableError : public Error {
 public:
  using Error::Error;
};

// Every input to the bandwidth formula is zero; no finite optimum exists.
class DegenerateSelectionError : public Error {
 public:
  using Error::Error;
};

// Malformed tabular input; `row` is the 1-based data row (header excluded).
class InputFormatError : public Error {
 public:
  InputFormatError(const std::string& msg, std::size_t row = 0)
      : Error(msg), row(row) {}

  std::size_t row = 0;
};

}  // namespace mrd
