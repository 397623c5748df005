#pragma once

#include <stdexcept>
#include <string>

namespace dcat {

// Invalid usage: bad shapes, out-of-range arguments, malformed files.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration problems: unknown keys, invalid values, missing files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected anywhere. Never propagated, always thrown at the source.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dcat
