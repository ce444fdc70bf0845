#pragma once

#include <stdexcept>
#include <string>

namespace nodeflow {

// Every failure the library reports derives from Error. The CLI maps the
// concrete type to a process exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes of the operands do not chain.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented contract (asymmetric input, empty list, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A numerical precondition does not hold (e.g. target delta >= delta_star).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Non-finite state met while integrating a flow.
class OverflowError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class BoundViolation : public Error {
 public:
  using Error::Error;
};

// Exit codes used by the command line tool.
inline int exit_code(const Error& e) {
  if (dynamic_cast<const ParseError*>(&e)) return 5;
  if (dynamic_cast<const BoundViolation*>(&e)) return 4;
  if (dynamic_cast<const ConvergenceError*>(&e) || dynamic_cast<const DivergenceError*>(&e)) return 3;
  return 2;
}

}  // namespace nodeflow
