#pragma once

#include <stdexcept>
#include <string>

namespace vqa {

// Error categories map onto CLI exit codes: usage -> 1, data -> 2, numeric -> 3.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent input data (files, manifests, headers).
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Parse failure in a byte stream; carries the offending byte offset.
struct ParseError : DataError {
  ParseError(const std::string& msg, std::size_t byte_offset)
      : DataError(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

// Numeric breakdown: NaN gradients, degenerate correlations, diverged runs.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// API misuse, e.g. backward before forward.
struct StateError : Error {
  explicit StateError(const std::string& msg) : Error(msg) {}
};

}  // namespace vqa
