#pragma once

#include <iosfwd>

namespace spanflow::cli {

// Entry point for the spanflow binary. Returns the process exit code:
// 0 success, 1 bad input or configuration, 2 runtime failure.
int run(int argc, const char* const* argv);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace spanflow::cli
