#pragma once
// Error taxonomy: InvalidInputError (and subclasses) mean the caller fed bad
// data or options and map to CLI exit code 1; InternalError means a bug or
// broken invariant and maps to exit code 2.

#include <stdexcept>
#include <string>

namespace ovsal {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInputError : Error {
  using Error::Error;
};

// Unparseable or structurally broken file content.
struct FormatError : InvalidInputError {
  using InvalidInputError::InvalidInputError;
};

// Inconsistent or out-of-range configuration.
struct ConfigError : InvalidInputError {
  using InvalidInputError::InvalidInputError;
};

struct InternalError : Error {
  using Error::Error;
};

}  // namespace ovsal
