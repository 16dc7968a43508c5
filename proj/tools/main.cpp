#include <iostream>

#include "hetcurve/cli.hpp"

int main(int argc, char** argv) { return hetcurve::run_cli(argc, argv, std::cout, std::cerr); }
