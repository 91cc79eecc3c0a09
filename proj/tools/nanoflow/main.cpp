#include <iostream>

#include "nanoflow/commands.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return nanoflow::cli::run(args, std::cout, std::cerr);
}
