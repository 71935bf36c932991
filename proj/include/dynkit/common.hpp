#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dynkit {

// Error taxonomy mapped onto CLI exit codes: ConfigError -> 2,
// DataError -> 3, NumericError and ShapeError -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dynkit
