// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "nnc/cli.hpp"

int main(int argc, char** argv) { return nnc::run_cli(argc, argv, std::cout, std::cerr); }
