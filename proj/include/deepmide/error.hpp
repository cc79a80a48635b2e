#pragma once

#include <stdexcept>
#include <string>

namespace deepmide {

// Base of all library exceptions. The CLI maps ConfigError to exit code 1
// and every other Error to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation does not hold for the input.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of a transform.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Factorization failure, non-finite loss, and similar.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace deepmide
