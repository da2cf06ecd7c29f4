// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Graph -> Plan: optimization pipeline, storage planning, parameter
// selection against a tune table, and lowering.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nnc/autotune.hpp"
#include "nnc/exec.hpp"
#include "nnc/passes.hpp"

namespace nnc {

struct CompileOptions {
  PipelineOptions pipeline;
  std::optional<std::size_t> force_block;
  std::optional<std::size_t> force_threads;
};

struct Compiled {
  Plan plan;
  std::vector<PassReport> reports;
};

/// One query per product node of an optimized graph. Body nodes weigh 1 and
/// preamble nodes 1/max_iters. Sparse operands are priced as dense work on
/// their nonzero extent: field dims times field count for LocallyDense,
/// dense dims scaled by fill otherwise.
std::vector<TuneQuery> tune_queries(const ExecutionGraph& optimized);

/// Throws GraphError for an invalid graph and TuneError for an unusable
/// table. Without product nodes the block size defaults to the calibrated
/// block closest to 64 and one thread.
Compiled compile(const ExecutionGraph& graph, const TuneTable& table,
                 const CompileOptions& options = {});

/// Pass report lines, storage decisions, the selection and the phases.
std::vector<std::string> dump_plan(const Compiled& compiled);

}  // namespace nnc
