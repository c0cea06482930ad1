#pragma once

#include <iosfwd>

namespace hscp {

/// Entry point of the `hscp` tool. Returns the process exit status:
/// 0 success, 2 I/O error, 3 validation error, 4 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hscp
