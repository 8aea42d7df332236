#pragma once

#include <iosfwd>

namespace ltla::cli {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConstraintNotMet = 3;
inline constexpr int kExitNumericalAbort = 4;

/// Runs the `ltla` command line. Normal output goes to `out`, diagnostics and
/// usage text to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ltla::cli
