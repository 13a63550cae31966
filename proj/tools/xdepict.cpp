#include <iostream>

#include "xdepict/cli.hpp"

int main(int argc, char** argv) { return xdepict::run_cli(argc, argv, std::cout, std::cerr); }
