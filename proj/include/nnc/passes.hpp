// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Static optimization passes. Each pass is a pure function from a validated
// graph to a validated graph plus a report of what it changed.

#pragma once

#include <string>
#include <vector>

#include "nnc/graph.hpp"

namespace nnc {

struct FusionRecord {
  std::string pattern;
  std::vector<std::string> replaced;  // in node order; the last id is reused
  std::string fused;

  friend bool operator==(const FusionRecord&, const FusionRecord&) = default;
};

struct RewriteRecord {
  std::string rule;
  std::string node;

  friend bool operator==(const RewriteRecord&, const RewriteRecord&) = default;
};

struct PassReport {
  std::string pass_name;
  std::vector<RewriteRecord> rewrites;
  std::vector<std::string> hoisted;
  std::vector<FusionRecord> fusions;
  std::vector<std::string> removed;

  std::size_t nodes_removed() const { return removed.size(); }
  std::size_t nodes_hoisted() const { return hoisted.size(); }
  bool empty() const {
    return rewrites.empty() && hoisted.empty() && fusions.empty() && removed.empty();
  }
  /// One line per change, e.g. `fuse MultBiasSigm n1,n2,n3 -> n3`.
  std::vector<std::string> lines() const;
};

/// A fusable op sequence: step i+1 consumes step i through its first input,
/// and every step except the last has no other consumer. A pattern whose
/// replacement is ElemChain instead grows a tree of elementwise nodes; its
/// sequence is the smallest tree it accepts.
struct FusionPattern {
  std::string name;
  std::vector<std::vector<OpKind>> sequence;
  OpKind replacement;
};

/// MultBiasSigm, SubSqSum and ElemChain, tried in that order.
const std::vector<FusionPattern>& default_fusion_patterns();

struct PassResult {
  ExecutionGraph graph;
  PassReport report;
};

/// Keeps the nodes backward-reachable from outputs, update producers and the
/// cost; derived vars of removed nodes go with them.
PassResult dead_code_elim(ExecutionGraph graph);
/// Marks every live node whose transitive inputs are all Constant for the
/// one-time preamble and clears the mark everywhere else.
PassResult hoist_invariants(ExecutionGraph graph);
/// Folds Transpose into the adjacent product and distributes
/// (Z*A^T -+ X)*B into Z*(A^T*B) -+ X*B when A, B and X are invariant.
PassResult rewrite_ops(ExecutionGraph graph);
PassResult fuse_methods(ExecutionGraph graph,
                        const std::vector<FusionPattern>& patterns = default_fusion_patterns());

struct PipelineOptions {
  bool rewrite = true;
  bool hoist = true;
  bool fuse = true;
  bool dce = true;
};

struct PipelineResult {
  ExecutionGraph graph;
  std::vector<PassReport> reports;
};

/// rewrite -> hoist -> fuse -> DCE. Disabled passes are skipped and report
/// nothing. Idempotent.
PipelineResult run_pipeline(ExecutionGraph graph, const PipelineOptions& options = {});

}  // namespace nnc
