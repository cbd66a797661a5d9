#pragma once

#include <stdexcept>
#include <string>

namespace csanct {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes: validation-like failures exit 1, runtime failures exit 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Raised by the trainer when the loss or a gradient turns non-finite.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, long step) : NumericError(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace csanct
