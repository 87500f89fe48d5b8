#include <iostream>

#include "mmfuse/cli.hpp"

int main(int argc, char** argv) {
  return mmfuse::cli_dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
