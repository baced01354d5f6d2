#pragma once

#include <stdexcept>
#include <string>

namespace hoir {

// Shape or extent mismatch between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Axis or element index out of range.
struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// API contract breach, e.g. backward on a non-scalar loss.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Value outside its mathematical domain (truth degree, degenerate box).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Invalid configuration value.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Unknown action/object/interaction name or id.
struct VocabError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Scene generation could not satisfy its constraints.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rule-file syntax error with source position (1-based).
struct ParseError : std::runtime_error {
  int line;
  int column;
  ParseError(const std::string& msg, int line_, int column_)
      : std::runtime_error("line " + std::to_string(line_) + ", col " +
                           std::to_string(column_) + ": " + msg),
        line(line_),
        column(column_) {}
};

}  // namespace hoir
