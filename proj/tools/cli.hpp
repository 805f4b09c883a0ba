#pragma once

#include <iosfwd>

namespace fcns::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one fcns command. Diagnostics go to `err`; data goes to files.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

}  // namespace fcns::cli
