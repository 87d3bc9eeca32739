#pragma once

#include <stdexcept>
#include <string>

namespace pev {

/// Bad user input: config values, constraint violations, malformed data files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem and container-format failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A required artifact from an earlier subcommand is missing.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace pev
