#include <iostream>

#include "videxp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return videxp::run_cli(args, std::cout, std::cerr);
}
