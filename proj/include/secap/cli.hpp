#pragma once

#include <iosfwd>

namespace secap {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitUsage = 64;
inline constexpr int kExitInternal = 70;

// Subcommands: gen-data, train, eval, grad-check, export-features.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace secap
