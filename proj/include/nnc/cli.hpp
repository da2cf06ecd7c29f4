// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `nnc` command line: calibrate, plan, run, bench.
//
// Exit codes: 0 success, 1 bad flags, bad graph or failed run, 2 missing or
// invalid tune table. Results go to `out`, diagnostics to `err`.

#pragma once

#include <ostream>

namespace nnc {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nnc
