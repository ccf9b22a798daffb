#include <iostream>

#include "spdnn/cli.hpp"

int main(int argc, char** argv) { return spdnn::cli::run(argc, argv, std::cout, std::cerr); }
