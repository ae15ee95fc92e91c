#pragma once
#include <iosfwd>
#include <string>
#include <vector>

namespace nexus {

// Full command-line surface, in-process for testability: `args` excludes the
// program name; all output goes to the supplied streams. Returns the process
// exit code: 0 success, 2 usage/config error, 3 numerical failure.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

} // namespace nexus
