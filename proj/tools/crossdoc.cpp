#include <iostream>

#include "crossdoc/cli.hpp"

int main(int argc, char** argv) { return crossdoc::cli::cli_dispatch(argc, argv, std::cout, std::cerr); }
