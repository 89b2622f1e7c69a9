#include "mlca/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  // Long runs print stage results as they finish, also when redirected.
  std::cout << std::unitbuf;
  return mlca::cli::run(argc, argv, std::cout, std::cerr);
}
