#pragma once

#include <stdexcept>
#include <string>

namespace famadapt {

// Base for all toolkit errors; the CLI turns these into one-line diagnostics.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimension mismatches. Messages name both offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-range token or row ids.
struct IndexError : Error {
  using Error::Error;
};

// Invalid configuration values (lists every violation).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input files; messages carry line numbers where possible.
struct ParseError : Error {
  using Error::Error;
};

// A grouping or adapter set fails to cover what it must.
struct CoverageError : Error {
  using Error::Error;
};

// Numeric-domain violations (nonpositive sizes, k too large, ...).
struct DomainError : Error {
  using Error::Error;
};

// Filesystem and container-integrity problems.
struct IoError : Error {
  using Error::Error;
};

// API contract violations (non-scalar backward, empty batch, ...).
struct ContractError : Error {
  using Error::Error;
};

}  // namespace famadapt
