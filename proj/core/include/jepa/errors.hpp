#pragma once

#include <stdexcept>
#include <string>

namespace jepa {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not conform for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyper-parameter, rate, step size or weight.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Train-mode batch statistics need at least two samples.
class BatchTooSmallError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff API (e.g. differentiating a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

class SimulationDivergedError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset directory or checkpoint container.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace jepa
