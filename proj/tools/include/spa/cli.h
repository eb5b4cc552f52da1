// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0
//
// spa-prune entry point, callable in-process so tests do not need to spawn.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spa::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kOk = 0,
  kInputError = 1,
  kUnreachable = 2,
  kSolverFailure = 3,
  kVerifyFailure = 4,
};

/// `args` excludes the program name. Reports go to `out` unless a command
/// writes them to a file; diagnostics and summaries go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spa::cli
