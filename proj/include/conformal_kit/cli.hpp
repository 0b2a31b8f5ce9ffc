#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ckit {

// Exit codes: 0 success, 1 runtime error, 2 configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace ckit
