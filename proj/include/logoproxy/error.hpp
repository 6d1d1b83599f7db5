#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace logoproxy {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by caller-supplied data.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Vector too close to zero to be projected onto the norm sphere.
class DegenerateEmbedding : public Error {
 public:
  using Error::Error;
};

// Coordinate-wise median of a cluster has non-positive area.
class MergeDegenerate : public Error {
 public:
  using Error::Error;
};

class InsufficientBrands : public Error {
 public:
  using Error::Error;
};

// NaN or Inf encountered in a loss or gradient during training.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace logoproxy
