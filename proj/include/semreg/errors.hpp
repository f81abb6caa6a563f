// Exception hierarchy shared across the library. The CLI maps each type to a
// distinct exit code.
#pragma once

#include <stdexcept>
#include <string>

namespace semreg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input files (wrong size, wrong token count, bad magic).
struct FormatError : Error {
  using Error::Error;
};

// Well-formed input carrying invalid values (non-finite coordinates, ...).
struct DataError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Label id outside the configured taxonomy.
struct TaxonomyError : Error {
  using Error::Error;
};

// Array shape mismatch in the differentiable-computation engine.
struct ShapeError : Error {
  using Error::Error;
};

// A module precondition was violated by the caller (e.g. unpruned graph).
struct ContractError : Error {
  using Error::Error;
};

// Numerically ill-posed problem (zero weights, rank-deficient covariance).
struct DegenerateError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace semreg
