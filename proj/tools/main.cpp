#include <iostream>

#include "scribble/cli.hpp"

int main(int argc, char** argv) { return scribble::cli::cli_main(argc, argv, std::cout, std::cerr); }
