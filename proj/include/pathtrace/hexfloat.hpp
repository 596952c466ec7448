#pragma once

#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>

namespace pathtrace {

// Exact text encoding of a double as a C99-style hexadecimal float
// ("0x1.8p-1", "-0x0p+0"). Only finite values are representable.
inline std::string to_hexfloat(double value) {
  char buf[64];
  const bool negative = std::signbit(value);
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), std::fabs(value), std::chars_format::hex);
  std::string out = negative ? "-0x" : "0x";
  out.append(buf, ptr);
  return out;
}

// Inverse of to_hexfloat. Rejects anything that is not a finite hex float
// written in that canonical shape.
inline std::optional<double> parse_hexfloat(std::string_view text) {
  bool negative = false;
  if (!text.empty() && text.front() == '-') {
    negative = true;
    text.remove_prefix(1);
  }
  if (text.size() < 3 || text[0] != '0' || (text[1] != 'x' && text[1] != 'X')) return std::nullopt;
  text.remove_prefix(2);
  if (text.front() == '+' || text.front() == '-') return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value,
                                   std::chars_format::hex);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value))
    return std::nullopt;
  return negative ? -value : value;
}

}  // namespace pathtrace
