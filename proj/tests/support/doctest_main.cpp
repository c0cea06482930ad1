#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "hscp/log.hpp"

int main(int argc, char** argv) {
  // Clamping warnings on small random batches are expected; keep output readable.
  hscp::log::set_quiet(true);
  doctest::Context context(argc, argv);
  return context.run();
}
