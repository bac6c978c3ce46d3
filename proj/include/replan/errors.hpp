#pragma once

#include <stdexcept>
#include <string>

namespace replan {

// Bad or missing data: unreadable/invalid corpus or checkpoint files,
// impossible generation constraints, malformed CSVs. CLI exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Scenario generation exhausted its retry budget for a profile's placement
// constraints.
struct GenerationError : DataError {
  explicit GenerationError(const std::string& what) : DataError(what) {}
};

// Training produced a non-finite loss or gradient. CLI exit code 3.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace replan
