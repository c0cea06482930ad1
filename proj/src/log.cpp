#include "hscp/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace hscp::log {
namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;
}  // namespace

void set_quiet(bool quiet) { g_quiet.store(quiet); }
bool quiet() { return g_quiet.load(); }

void warn(std::string_view message) {
  if (quiet()) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "warning: " << message << '\n';
}

void info(std::string_view message) {
  if (quiet()) return;
  std::lock_guard lock(g_mutex);
  std::cerr << message << '\n';
}

}  // namespace hscp::log
