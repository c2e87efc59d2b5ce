#include <iostream>

#include "jafar/cli.hpp"

int main(int argc, char** argv) { return jafar::run_cli(argc, argv, std::cout, std::cerr); }
