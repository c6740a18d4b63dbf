#include <iostream>

#include "ffn/cli.hpp"

int main(int argc, char** argv) { return ffn::run_cli(argc, argv, std::cout, std::cerr); }
