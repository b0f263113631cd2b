#include <iostream>

#include "avdd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return avdd::cli::run(args, std::cout, std::cerr);
}
