#pragma once

#include <stdexcept>
#include <string>

namespace mstar {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape or argument shape does not match what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A forward or backward computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed text or binary input (cell documents, datasets, checkpoints).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or call arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mstar
