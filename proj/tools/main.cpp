// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "ramerge/cli.hpp"

int main(int argc, char** argv) {
    return ramerge::run_cli(argc, argv, std::cout, std::cerr);
}
