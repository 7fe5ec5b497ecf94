#pragma once

// Command-line driver: design, decode, simulate, estimate, wtp, serve.

#include <iosfwd>

namespace dce {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Runs one subcommand. Exit codes: 0 success, 2 usage or validation
/// failure, 3 numerical failure (estimation, degenerate design space).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dce
