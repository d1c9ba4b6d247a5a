#pragma once

#include <string>
#include <vector>

namespace ets {

// Runs the command line given argv without the program name. Returns the
// process exit code: 0 success, 2 usage, 3 structural, 4 numeric, 5 I/O.
int run_cli(const std::vector<std::string>& args);

}  // namespace ets
