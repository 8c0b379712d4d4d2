#pragma once

#include <string_view>

namespace ralb {

// Parses "4/255", "0.0156862754" or "1e-3" into a float. A fraction is
// evaluated as a double rational and rounded to float once, so "4/255" and
// the float nearest to 4/255 agree bitwise. Throws ArgumentError.
float parse_fraction(std::string_view text);

}  // namespace ralb
