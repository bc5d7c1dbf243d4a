#include <iostream>

#include "treecode/cli.hpp"

int main(int argc, char** argv) { return treecode::cli_main(argc, argv, std::cout, std::cerr); }
