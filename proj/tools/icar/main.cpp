#include <iostream>

#include "icar/gateway/cli.hpp"

int main(int argc, char** argv) { return icar::gateway::run_cli(argc, argv, std::cout, std::cerr); }
