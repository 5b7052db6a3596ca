#pragma once

#include <stdexcept>
#include <string>

namespace amam {

/// Dimension or shape contract violation. Messages name the offending dimension.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed file, bad magic, truncated payload, unwritable path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration value or schema violation.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace amam
