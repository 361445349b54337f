#include "redformer/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return redformer::cli::run(argc, argv, std::cout, std::cerr); }
