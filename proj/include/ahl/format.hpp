#pragma once

#include <charconv>
#include <string>
#include <string_view>

#include "ahl/errors.hpp"

namespace ahl {

/// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Strict full-string parse; throws FormatError with `context` on failure.
inline double parse_double(std::string_view text, std::string_view context) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw FormatError(std::string(context) + ": cannot parse number '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace ahl
