#include <iostream>

#include "citl/cli.hpp"

int main(int argc, char** argv) { return citl::execute(argc, argv, std::cout, std::cerr); }
