#pragma once

#include <stdexcept>
#include <string>

namespace mrkd {

// Error categories map 1:1 onto CLI exit codes (2/3/4).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mrkd
