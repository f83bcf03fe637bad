#include <iostream>
#include <string>
#include <vector>

#include "mos/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mos::run_cli(args, std::cout, std::cerr);
}
