#include <iostream>

#include "align/cli.hpp"

int main(int argc, char** argv) { return align::run_cli(argc, argv, std::cout, std::cerr); }
