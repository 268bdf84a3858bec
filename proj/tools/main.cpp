#include <iostream>
#include <string>
#include <vector>

#include "anchorcal/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return anchorcal::cli::run(args, std::cout, std::cerr);
}
