#pragma once

#include <stdexcept>
#include <string>

namespace oap {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Wrong vector/matrix dimensions handed to a network or environment.
struct ShapeError : Error {
  using Error::Error;
};

// Operation called in the wrong lifecycle state (no cached forward, untrained RankNet, ...).
struct StateError : Error {
  using Error::Error;
};

// NaN/inf produced or consumed where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Invalid state or action for an environment or oracle.
struct DomainError : Error {
  using Error::Error;
};

struct BudgetError : Error {
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace oap
