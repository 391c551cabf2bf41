#include <iostream>

#include "mcicjm/cli.hpp"

int main(int argc, char** argv) { return mcicjm::run_cli(argc, argv, std::cout, std::cerr); }
