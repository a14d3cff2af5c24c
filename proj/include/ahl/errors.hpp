#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ahl {

/// Shapes or lengths that do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration or violated precondition. Carries one message per
/// violation so front ends can print them line by line.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& message)
      : std::invalid_argument(message), violations_{message} {}
  explicit ConfigError(std::vector<std::string> violations)
      : std::invalid_argument(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& line : lines) {
      if (!out.empty()) out += "; ";
      out += line;
    }
    return out;
  }

  std::vector<std::string> violations_;
};

/// NaN/Inf produced by a numerical operation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (names the file and, when known, the byte offset).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures: missing files, unwritable directories.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ahl
