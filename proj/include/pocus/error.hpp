#pragma once

#include <stdexcept>
#include <string>

namespace pocus {

// Base of every error raised by the library. Callers that only need a
// message can catch this; the subclasses exist so that the CLI and the
// service can map failures onto exit codes and HTTP statuses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required column or key is missing from an input file.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Input is structurally fine but a value violates a domain rule.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or impossible parameter combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

// Operation not defined for the given model architecture.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Training aborted (empty class, divergent loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace pocus
