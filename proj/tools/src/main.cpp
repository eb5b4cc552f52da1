// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "spa/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return spa::cli::run(args, std::cout, std::cerr);
}
