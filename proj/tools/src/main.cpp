#include <iostream>

#include "detectornet/runtime.hpp"
#include "dnet_cli/cli.hpp"

int main(int argc, char** argv) {
  dnet::tune_allocator_for_training();
  return dnet::cli::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
