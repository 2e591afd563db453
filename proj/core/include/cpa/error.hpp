#pragma once

#include <stdexcept>
#include <string>

namespace cpa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration (bad alpha, K > n, unknown method...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine failed (singular system, empty quantile input...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cpa
