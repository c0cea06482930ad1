#include <iostream>

#include "hscp/cli.hpp"

int main(int argc, char** argv) { return hscp::run_cli(argc, argv, std::cout, std::cerr); }
