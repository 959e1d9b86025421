#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace auber {

// Base for everything thrown by this library. The category is a short
// stable token the CLI prints as "error[<category>]: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

// Dimension mismatch between operands.
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

// Caller passed a value outside the accepted domain.
struct InputError : Error {
  explicit InputError(const std::string& m) : Error("input", m) {}
};

// Illegal pruning action or episode misuse.
struct PolicyError : Error {
  explicit PolicyError(const std::string& m) : Error("policy", m) {}
};

// Layer state requested from an inconsistent gate configuration.
struct StateError : Error {
  explicit StateError(const std::string& m) : Error("state", m) {}
};

// Malformed text input (TSV rows, config JSON).
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error("parse", m) {}
};

// Binary artifact does not match the expected layout or version.
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

// Filesystem failure while reading or writing artifacts.
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

// Synthetic data constraints could not be satisfied.
struct GenerationError : Error {
  explicit GenerationError(const std::string& m) : Error("generation", m) {}
};

}  // namespace auber
