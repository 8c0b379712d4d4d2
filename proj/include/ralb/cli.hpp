#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ralb::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// Runs one subcommand. `args` excludes the program name. Usage errors print
// the relevant help text to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ralb::cli
