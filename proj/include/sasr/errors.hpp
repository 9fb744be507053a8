#pragma once

#include <stdexcept>
#include <string>

namespace sasr {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes passed to a primitive.
struct ShapeError : Error {
  using Error::Error;
};

// A primitive produced a non-finite value; message names the op.
struct NumericError : Error {
  using Error::Error;
};

// An operation was called outside its contract (non-scalar loss,
// missing gradient, empty batch, ...).
struct ContractError : Error {
  using Error::Error;
};

// Token sequence exceeds the policy's context length.
struct ContextError : Error {
  using Error::Error;
};

// Scheduler or trainer used before required state was established.
struct StateError : Error {
  using Error::Error;
};

// Both gradient-norm signals are zero; the mixing probability is undefined.
struct DegenerateSignalError : Error {
  using Error::Error;
};

// Puzzle generation exhausted its rejection budget.
struct GenerationError : Error {
  using Error::Error;
};

// Invalid configuration file or CLI usage.
struct ConfigError : Error {
  using Error::Error;
};

// File could not be read or written.
struct IoError : Error {
  using Error::Error;
};

}  // namespace sasr
