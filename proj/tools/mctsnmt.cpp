#include <iostream>

#include "mctsnmt/cli.hpp"

int main(int argc, char** argv) {
  return mctsnmt::run_cli(argc, argv, std::cout, std::cerr);
}
