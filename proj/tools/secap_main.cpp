#include <iostream>

#include "secap/cli.hpp"

int main(int argc, char** argv) { return secap::run_cli(argc, argv, std::cout, std::cerr); }
