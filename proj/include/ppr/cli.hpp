#pragma once

#include <iosfwd>

namespace ppr::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Runs one subcommand. JSON results go to `out`, logs and errors to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ppr::cli
