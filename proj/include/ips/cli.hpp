#pragma once

#include <iosfwd>

namespace ips {

/// Runs the command-line interface. Exit codes: 0 ok, 1 usage or data error,
/// 2 numerical non-convergence.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ips
