#include <iostream>

#include "flowadapter/eval/cli.hpp"

int main(int argc, char** argv) {
  return fa::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
