#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cclab {

/// Exit codes: 0 success, 1 runtime failure, 2 usage, config or schema error.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cclab
