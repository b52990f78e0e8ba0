#include "darsa/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return darsa::cli::run(argc, argv, std::cout, std::cerr); }
