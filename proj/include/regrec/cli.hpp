#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace regrec {

/// Runs the command line (argv without the program name). Exit codes: 0 ok,
/// 2 bad input or configuration, 3 internal invariant violation.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Layout strings behind `maskviz --preset`.
std::string maskviz_preset(const std::string& name);

}  // namespace regrec
