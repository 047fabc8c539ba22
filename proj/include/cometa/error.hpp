#pragma once

#include <stdexcept>
#include <string>

namespace cometa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A graph input reachable from the requested root was not fed.
class MissingFeedError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range row, vocabulary index or unknown entity.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cometa
