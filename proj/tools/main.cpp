#include "hybridtrial/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return hybridtrial::run_cli(argc, argv, std::cout, std::cerr); }
