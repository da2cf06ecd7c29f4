// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/compiler.hpp"

#include <cmath>
#include <cstdlib>
#include <map>
#include <utility>

#include "nnc/storage.hpp"

namespace nnc {

namespace {

struct ProductView {
  OpKind product;
  std::size_t left = 0, right = 1;  // input positions of the two operands
  bool left_transposed = false, right_transposed = false;
};

std::optional<ProductView> product_view(const OpNode& n) {
  switch (n.kind) {
    case OpKind::MatMul:
    case OpKind::TransposeMatMulLeft:
    case OpKind::MatMulTransposeRight:
      return ProductView{n.kind, 0, 1, n.kind == OpKind::TransposeMatMulLeft,
                         n.kind == OpKind::MatMulTransposeRight};
    case OpKind::MultBiasSigm:
      return ProductView{n.attrs.product, 0, 1, n.attrs.product == OpKind::TransposeMatMulLeft,
                         n.attrs.product == OpKind::MatMulTransposeRight};
    case OpKind::MaskedMatMul:
      return ProductView{OpKind::TransposeMatMulLeft, 0, 1, true, false};
    default:
      return std::nullopt;
  }
}

/// Appends the queries for one product of effective dims (m x k) * (k x n)
/// whose `sparse` side (0 left, 1 right, 2 output) carries `pattern`.
void price(std::vector<TuneQuery>& out, const std::string& label, std::size_t m, std::size_t k,
           std::size_t n, double weight, int sparse, const SparsityPattern* pattern, Shape stored,
           bool transposed) {
  if (!pattern || pattern->is_dense()) {
    out.push_back({m, k, n, weight, label});
    return;
  }
  if (choose_format(*pattern, stored) == Format::LocallyDense) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> fields;
    for (const Block& f : pattern->blocks()) {
      ++fields[transposed ? std::pair{f.cols, f.rows} : std::pair{f.rows, f.cols}];
    }
    for (const auto& [dims, count] : fields) {
      const auto [fr, fc] = dims;
      const double w = weight * static_cast<double>(count);
      if (sparse == 0) out.push_back({fr, fc, n, w, label});
      if (sparse == 1) out.push_back({m, fr, fc, w, label});
      if (sparse == 2) out.push_back({fr, k, fc, w, label});
    }
    return;
  }
  const double fill =
      static_cast<double>(pattern->nonzeros(stored)) / static_cast<double>(stored.size());
  out.push_back({m, k, n, weight * fill, label});
}

}  // namespace

std::vector<TuneQuery> tune_queries(const ExecutionGraph& g) {
  const auto patterns = infer_patterns(g);
  const double iters = g.convergence ? static_cast<double>(g.convergence->max_iters) : 1.0;
  std::vector<TuneQuery> queries;
  for (const OpNode& n : g.nodes) {
    const auto view = product_view(n);
    if (!view) continue;
    const Shape a = g.shape_of(n.inputs[view->left]);
    const Shape b = g.shape_of(n.inputs[view->right]);
    const std::size_t m = view->left_transposed ? a.cols : a.rows;
    const std::size_t k = view->left_transposed ? a.rows : a.cols;
    const std::size_t cols = view->right_transposed ? b.rows : b.cols;
    const double weight = n.preamble ? 1.0 / iters : 1.0;

    if (n.kind == OpKind::MaskedMatMul) {
      price(queries, n.id, m, k, cols, weight, 2, patterns.at(n.id), n.out_shape, false);
      continue;
    }
    const SparsityPattern* pa = patterns.at(n.inputs[view->left]);
    const SparsityPattern* pb = patterns.at(n.inputs[view->right]);
    if (!pa->is_dense()) {
      price(queries, n.id, m, k, cols, weight, 0, pa, a, view->left_transposed);
    } else {
      price(queries, n.id, m, k, cols, weight, 1, pb, b, view->right_transposed);
    }
  }
  return queries;
}

Compiled compile(const ExecutionGraph& graph, const TuneTable& table, const CompileOptions& options) {
  if (auto diags = validate(graph); !diags.empty()) {
    throw GraphError(diags.front().id + ": " + diags.front().message);
  }
  table.check();
  auto [optimized, reports] = run_pipeline(graph, options.pipeline);

  const auto queries = tune_queries(optimized);
  Selection selection;
  if (!queries.empty()) {
    selection = select_params(table, queries);
  } else {
    // Nothing to tune: the calibrated block closest to 64 on one thread.
    selection.block = table.b_axis.empty() ? 64 : table.b_axis.front();
    for (std::size_t b : table.b_axis) {
      const auto dist = [](std::size_t x) { return std::abs(std::log2(static_cast<double>(x)) - 6.0); };
      if (dist(b) < dist(selection.block)) selection.block = b;
    }
    selection.threads = 1;
  }
  if (options.force_block || options.force_threads) {
    if (options.force_block) selection.block = *options.force_block;
    if (options.force_threads) selection.threads = *options.force_threads;
    if (selection.block == 0 || selection.threads == 0) throw TuneError("forced b and t must be positive");
    selection.forced = true;
    selection.per_query.clear();
    double total = 0.0;
    for (const TuneQuery& q : queries) {
      const double s = q.weight * estimate_time(table, q.m, q.k, q.n, selection.block, selection.threads).seconds;
      selection.per_query[q.label] += s;
      total += s;
    }
    selection.predicted_seconds = total;
  }

  auto decisions = plan_storage(optimized, selection.block);
  Plan plan = lower(std::move(optimized), std::move(decisions), selection);
  return {std::move(plan), std::move(reports)};
}

std::vector<std::string> dump_plan(const Compiled& compiled) {
  std::vector<std::string> lines;
  for (const PassReport& r : compiled.reports) {
    for (const std::string& l : r.lines()) lines.push_back(l);
  }
  for (const StorageDecision& d : compiled.plan.decisions) lines.push_back("storage " + describe(d));
  lines.push_back(compiled.plan.selection.describe());
  for (std::string& l : compiled.plan.describe()) lines.push_back(std::move(l));
  return lines;
}

}  // namespace nnc
