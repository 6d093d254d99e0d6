#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kpl::cli {

/// Runs one CLI invocation. args excludes the program name. Returns the exit
/// code: 0 success, 1 usage, 2 data/format, 3 numeric, 4 internal.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kpl::cli
