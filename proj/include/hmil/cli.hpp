#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hmil {

/// Runs the command line tool in-process. `args` excludes the program name.
/// Exit codes: 0 success, 1 I/O or environment, 2 input or validation.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hmil
