#include <iostream>

#include "mqir/cli/cli.hpp"

int main(int argc, char** argv) { return mqir::cli::run_cli(argc, argv, std::cout, std::cerr); }
