#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace citl {

/// Exit statuses of the command-line tool.
inline constexpr int k_exit_ok = 0;
inline constexpr int k_exit_partial = 1;
inline constexpr int k_exit_config = 2;

/// Parses and runs one command line (argv[0] is the program name).
int execute(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace citl
