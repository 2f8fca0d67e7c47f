#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pderank {

// Malformed token in an interaction file.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DatasetError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint or ground-truth file does not match the expected layout.
class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class UnsupportedVersionError : public FormatError {
  using FormatError::FormatError;
};

// Every user of a mini-batch was skipped, so the risk is undefined.
class DegenerateBatchError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(long long iteration, const std::string& what)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  long long iteration() const noexcept { return iteration_; }

 private:
  long long iteration_;
};

}  // namespace pderank
