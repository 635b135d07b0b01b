#pragma once

#include <stdexcept>
#include <string>

namespace capnet {

/// Invalid configuration or user input. Maps to CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite state or loss encountered mid-computation. CLI exit code 2.
struct DivergedError : std::runtime_error {
  int step;
  explicit DivergedError(const std::string& msg, int step_index = -1)
      : std::runtime_error(msg), step(step_index) {}
};

/// Filesystem or parse failure. CLI exit code 3.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace capnet
