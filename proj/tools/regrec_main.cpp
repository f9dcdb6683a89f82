#include <iostream>

#include "regrec/cli.hpp"

int main(int argc, char** argv) {
  return regrec::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
