#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedunlearn {

/// Violated precondition on an operation's inputs (dimension mismatch, bad weights, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Local training produced a non-finite or exploding model.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t round, std::size_t client)
      : std::runtime_error(what), round_(round), client_(client) {}

  std::size_t round() const noexcept { return round_; }
  std::size_t client() const noexcept { return client_; }

 private:
  std::size_t round_;
  std::size_t client_;
};

/// Step size incompatible with the regime's contraction bound, or bad budget.
class CalibrationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Removing the requested clients would leave no weight mass.
class EmptyFederationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The closed-form increment p_c/(1-p_c) is undefined for p_c = 1.
class SingularRemovalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidRequestError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A history position was asked for that the checkpoint store did not retain.
class MissingCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedunlearn
