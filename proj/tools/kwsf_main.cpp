#include <iostream>

#include "kwsf/cli/app.hpp"

int main(int argc, char** argv) { return kwsf::cli::run(argc, argv, std::cout, std::cerr); }
