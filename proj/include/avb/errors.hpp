#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avb {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside a function's mathematical domain (negative ζ, non-PD, ...).
struct domain_error : error {
  using error::error;
};

struct shape_error : error {
  using error::error;
};

// Invalid configuration or dataset invariant.
struct validation_error : error {
  using error::error;
};

struct decomposition_error : error {
  decomposition_error(std::size_t pivot, const std::string& what)
      : error(what), pivot(pivot) {}
  std::size_t pivot;
};

// NaN/Inf encountered while training or evaluating.
struct numerical_error : error {
  using error::error;
};

struct parse_error : error {
  parse_error(std::size_t line, const std::string& what)
      : error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line(line) {}
  std::size_t line;  // 1-based, 0 when the error is not tied to a line
};

struct io_error : error {
  using error::error;
};

}  // namespace avb
