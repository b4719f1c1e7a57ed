#include <iostream>

#include "qpat_cli/commands.hpp"

int main(int argc, char** argv) { return qpat::cli::run(argc, argv, std::cout, std::cerr); }
