#pragma once

#include <iosfwd>

namespace crossdoc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs the `crossdoc` command line. Usage errors return 2, failed commands 1.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crossdoc::cli
