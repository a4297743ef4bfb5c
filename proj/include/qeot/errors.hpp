#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qeot {

// Shape or broadcast mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value or combination of values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke a documented precondition (non-scalar root, NaN entry, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// More items than the configuration can hold: gold triples > queries,
// entities that do not fit the sentence, boxes that do not fit the grid.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input whose content violates a domain invariant.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// NaN/Inf showed up in a loss or a gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qeot
