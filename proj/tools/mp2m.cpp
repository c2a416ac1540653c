#include <iostream>

#include "mp2m/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mp2m::cli::run(args, std::cout, std::cerr);
}
