#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace feed::harness {

// Runs the command-line interface; args excludes the program name.
// Returns the process exit code: 0 success, 1 runtime error, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

} // namespace feed::harness
