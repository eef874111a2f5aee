#include <iostream>

#include "siren/cli/cli.h"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return siren::cli::run_command(args, std::cout, std::cerr);
}
