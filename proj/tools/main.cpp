#include <iostream>

#include "ipdma/commands.hpp"

int main(int argc, char** argv) {
    return ipdma::run_cli(argc, argv, std::cout, std::cerr);
}
