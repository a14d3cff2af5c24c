#include "ahl/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return ahl::run_cli(argc, argv, std::cout, std::cerr); }
