#include <iostream>

#include "slurmbridge/cli.hpp"

int main(int argc, char** argv) {
  return slurmbridge::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
