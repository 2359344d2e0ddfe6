#include <iostream>

#include "hiercls/cli.hpp"

int main(int argc, char** argv) { return hiercls::run_cli(argc, argv, std::cout, std::cerr); }
