#pragma once

#include <string_view>

namespace hscp::log {

/// Quiet mode drops both warnings and informational messages.
void set_quiet(bool quiet);
bool quiet();

void warn(std::string_view message);
void info(std::string_view message);

}  // namespace hscp::log
