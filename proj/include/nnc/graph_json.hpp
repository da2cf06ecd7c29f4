// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON graph documents.
//
//   {"version": 1,
//    "vars": [{"id": "W", "kind": "SparseMatrix", "shape": [8, 8], "role": "State",
//              "pattern": {"blocks": [[0, 0, 4, 4]]}, "init": [[...], ...]}, ...],
//    "nodes": [{"id": "n0", "kind": "MatMul", "inputs": ["V", "W"]}, ...],
//    "updates": {"W": "n7"},
//    "outputs": ["W"],
//    "convergence": {"cost": "cost", "tol": 1e-6, "max_iters": 100}}
//
// A pattern is {"blocks": [[row0, col0, rows, cols], ...]} or
// {"coords": [[row, col], ...]}. Node attributes are "theta" (SoftShrink)
// and "pattern_of" (MaskedMatMul). "init" is optional, row-major nested
// arrays. Unknown fields and fused node kinds are rejected.

#pragma once

#include <filesystem>
#include <string>

#include "nnc/graph.hpp"

namespace nnc {

struct GraphDocument {
  ExecutionGraph graph;
  ValueMap init;  // vars that carried an "init" field
};

/// Throws GraphError naming the offending field, e.g. `vars[2].shape`.
GraphDocument parse_graph_json(const std::string& text);
GraphDocument load_graph_json(const std::filesystem::path& path);

/// Serializes an unfused graph; `init` entries are written for vars they
/// name. Throws GraphError for fused kinds or preamble marks.
std::string graph_to_json(const ExecutionGraph& graph, const ValueMap& init = {});

}  // namespace nnc
