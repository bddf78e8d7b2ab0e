#include <iostream>

#include "ips/cli.hpp"

int main(int argc, char** argv) { return ips::run_cli(argc, argv, std::cout, std::cerr); }
