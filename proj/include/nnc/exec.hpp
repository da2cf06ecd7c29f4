// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Lowering of an optimized graph to a barrier-phased task schedule, the
// multithreaded runner, and the naive dense reference evaluator.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nnc/autotune.hpp"
#include "nnc/graph.hpp"
#include "nnc/storage.hpp"

namespace nnc {

/// One unit of work: compute stored unit `unit` of node `node`'s output.
struct KernelTask {
  std::size_t node = 0;  // index into Plan::graph.nodes
  std::size_t unit = 0;
  std::size_t worker = 0;

  friend bool operator==(const KernelTask&, const KernelTask&) = default;
};

/// Tasks that may run concurrently; a barrier follows every phase.
struct Phase {
  std::vector<KernelTask> tasks;
};

struct Plan {
  ExecutionGraph graph;
  std::vector<StorageDecision> decisions;  // one per value
  Selection selection;
  std::vector<Phase> preamble;
  std::vector<Phase> body;

  const StorageDecision& decision(std::string_view id) const;
  std::size_t threads() const { return selection.threads; }
  /// `phase body 2: n4[0..3] n7[0]`, one line per phase.
  std::vector<std::string> describe() const;
};

/// Splits every node into one task per stored unit of its output (reductions
/// to a scalar are one task), assigns tasks round-robin to the selection's
/// workers, and levels the nodes: a node runs one phase after the latest
/// producer it reads within the same part (preamble or body).
Plan lower(ExecutionGraph graph, std::vector<StorageDecision> decisions, Selection selection);

/// Empty iff no phase writes the same (node, unit) twice and no phase holds
/// both a producer and a consumer of one value.
std::vector<std::string> check_phase_safety(const Plan& plan);

enum class StopReason { Converged, MaxIters };
std::string_view to_string(StopReason reason);

struct RunOptions {
  /// Overrides the plan's thread count.
  std::optional<std::size_t> threads;
  /// Written into the padding of partially filled dense tiles before the
  /// run; the packed finals then show whether any kernel wrote there.
  std::optional<double> padding_sentinel;
  bool keep_packed = false;
};

struct RunResult {
  std::size_t iterations = 0;
  double final_cost = 0.0;
  StopReason stop_reason = StopReason::MaxIters;
  std::vector<double> costs;  // one per iteration
  /// Wall time of the convergence loop alone (no packing, no preamble).
  double loop_seconds = 0.0;
  ValueMap outputs;
  /// Completed evaluations of each node (all of its tasks ran).
  std::map<std::string, std::size_t> node_runs;
  /// Packed final values of every non-derived var, when requested.
  std::map<std::string, PackedMatrix> packed;
};

/// Runs the preamble once, then the body until the stopping rule fires or
/// max_iters is reached. Each iteration reads the state as it was when the
/// iteration started; updates apply after the cost is observed. Missing or
/// misshapen initial values and non-finite costs throw ExecError.
RunResult run(const Plan& plan, const ValueMap& initial, const RunOptions& options = {});

/// The same loop on plain dense matrices, one op at a time, unoptimized.
RunResult run_reference(const ExecutionGraph& graph, const ValueMap& initial);

}  // namespace nnc
