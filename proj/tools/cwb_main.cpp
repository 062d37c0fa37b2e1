#include <iostream>

#include "cwb/cli.hpp"

int main(int argc, char** argv) {
  return cwb::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
