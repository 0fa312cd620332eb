#pragma once

#include <stdexcept>
#include <string>

namespace uadlab {

// Base of every error raised by the library. Subclasses map onto the CLI
// exit codes (config errors -> 1, data errors -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Raised by training when a loss term stops being finite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace uadlab
