#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mp2m {

// Bad shapes, out-of-range indices and invalid hyper-parameters.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input that is well-formed text but violates a data invariant
// (duplicate frames, non-finite coordinates, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Operation invoked on objects that are not in a usable state, e.g. an empty
// memory bank or a checkpoint that belongs to a different bank.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Versioned file with a wrong magic string, version or corrupt body.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mp2m
