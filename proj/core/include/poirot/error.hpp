#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace poirot {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Width disagreement between operands, or a width outside 1..64.
class TypeError : public Error {
 public:
  using Error::Error;
};

class UnboundVariableError : public Error {
 public:
  explicit UnboundVariableError(const std::string& name)
      : Error("unbound variable '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// Malformed IR text. Carries a 1-based source position.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message)
      : Error("line " + std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// A loop whose backward branch has no declared bound, or a branch unroll cannot remove.
class UnboundedLoopError : public Error {
 public:
  using Error::Error;
};

class ExecutionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Solver process failure or unparseable solver output.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// The brute-force input space exceeds the configured bit cap.
class OracleInfeasibleError : public Error {
 public:
  OracleInfeasibleError(unsigned bits, unsigned cap)
      : Error("brute force needs " + std::to_string(bits) + " input bits, cap is " +
              std::to_string(cap)),
        bits_(bits),
        cap_(cap) {}
  unsigned bits() const noexcept { return bits_; }
  unsigned cap() const noexcept { return cap_; }

 private:
  unsigned bits_;
  unsigned cap_;
};

class NotApplicableError : public Error {
 public:
  using Error::Error;
};

}  // namespace poirot
