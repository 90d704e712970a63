#include <iostream>
#include <string>
#include <vector>

#include "paskit/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return paskit::RunCli(args, std::cout, std::cerr);
}
