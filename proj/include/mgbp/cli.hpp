#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mgbp {

/// Runs one command line (args[0] is the program name). Returns the exit
/// code; failures print a single "error: ..." line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mgbp
