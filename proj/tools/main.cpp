#include <iostream>

#include "bavae/cli.hpp"

int main(int argc, char** argv) { return bavae::cli::run(argc, argv, std::cout, std::cerr); }
