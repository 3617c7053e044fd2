#include <iostream>

#include "gradmimic/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return gradmimic::run_cli(args, std::cout, std::cerr);
}
