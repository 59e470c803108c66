#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcem {

/// Malformed text input (circuit files, dataset files). Carries the
/// 1-based line number when one is known (0 = not line-addressable).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& reason)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + reason
                                    : reason),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Numeric domain failure on otherwise well-formed input: zero partition
/// functions, zero-likelihood samples, enumeration guards.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pcem
