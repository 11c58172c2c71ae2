#include <iostream>
#include <string>
#include <vector>

#include "failure_scout/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return failure_scout::run_cli(args, std::cout, std::cerr);
}
