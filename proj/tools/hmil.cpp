#include <iostream>
#include <string>
#include <vector>

#include "hmil/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hmil::run_cli(args, std::cout, std::cerr);
}
