#include <iostream>

#include "mgbp/cli.hpp"

int main(int argc, char** argv) {
    return mgbp::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
