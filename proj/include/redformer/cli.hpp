#pragma once

#include <iosfwd>

namespace redformer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Subcommands: gen, train, eval, nds, ablate, viz. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace redformer::cli
