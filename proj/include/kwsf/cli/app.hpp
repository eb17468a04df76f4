#pragma once

#include <ostream>

namespace kwsf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitCorrupt = 4;

inline constexpr const char* kVersion = "0.1.0";

// Entry point behind the `kwsf` binary. Never throws; returns an exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kwsf::cli
