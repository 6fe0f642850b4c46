#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gcnkit {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or channel counts that do not fit an operator.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input: bad flags, bad files, invalid hyperparameters.
class InputError : public Error {
 public:
  using Error::Error;
};

// Parse failure in a text format; carries the 1-based line number.
class ParseError : public InputError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Non-finite values or other numerical breakdown.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace gcnkit
