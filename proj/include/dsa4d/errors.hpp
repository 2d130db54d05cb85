#pragma once

#include <stdexcept>
#include <string>

namespace dsa4d {

/// Malformed or inconsistent configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing, unreadable or schema-violating data on disk (CLI exit code 3).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values during optimization (CLI exit code 4).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dsa4d
