// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "bcu/commands.hpp"

int main(int argc, char** argv) { return bcu::run_cli(argc, argv, std::cout, std::cerr); }
