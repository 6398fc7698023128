#pragma once

#include <stdexcept>
#include <string>

namespace vlaconv {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Simulated memory access outside the machine's flat memory.
class FaultError : public Error {
 public:
  using Error::Error;
};

/// Bad operand, shape or range handed to an operation.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A kernel was asked to run a layer it cannot serve.
class DispatchError : public Error {
 public:
  using Error::Error;
};

/// Invalid machine, cache or cost configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed network description; carries the 1-based source line.
class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace vlaconv
