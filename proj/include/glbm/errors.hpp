#pragma once

#include <stdexcept>
#include <string>

namespace glbm {

/// Solver state became non-physical (non-positive density, NaN, ...).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The tile hierarchy violates a structural invariant.
class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument to a topology query (parent of the top level, ...).
class DomainError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Scene file could not be parsed.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scene file parsed but failed validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace glbm
