#include "ralb/fraction.hpp"

#include "ralb/errors.hpp"

#include <charconv>
#include <cmath>
#include <string>

namespace ralb {

namespace {

double parse_number(std::string_view s, std::string_view whole) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ArgumentError("invalid number '" + std::string(whole) + "'");
  return v;
}

}  // namespace

float parse_fraction(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return static_cast<float>(parse_number(text, text));
  const double num = parse_number(text.substr(0, slash), text);
  const double den = parse_number(text.substr(slash + 1), text);
  if (den == 0.0) throw ArgumentError("zero denominator in '" + std::string(text) + "'");
  return static_cast<float>(num / den);
}

}  // namespace ralb
