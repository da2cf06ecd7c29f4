// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/passes.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace nnc {

std::vector<std::string> PassReport::lines() const {
  std::vector<std::string> out;
  for (const auto& r : rewrites) out.push_back("rewrite " + r.rule + " " + r.node);
  for (const auto& h : hoisted) out.push_back("hoist " + h);
  for (const auto& f : fusions) {
    std::string ids;
    for (const auto& id : f.replaced) ids += (ids.empty() ? "" : ",") + id;
    out.push_back("fuse " + f.pattern + " " + ids + " -> " + f.fused);
  }
  for (const auto& r : removed) out.push_back("remove " + r);
  return out;
}

const std::vector<FusionPattern>& default_fusion_patterns() {
  static const std::vector<FusionPattern> kPatterns = {
      {"MultBiasSigm",
       {{OpKind::MatMul, OpKind::TransposeMatMulLeft, OpKind::MatMulTransposeRight},
        {OpKind::BiasAddRow},
        {OpKind::Sigmoid}},
       OpKind::MultBiasSigm},
      {"SubSqSum", {{OpKind::Sub}, {OpKind::Square}, {OpKind::SumAll}}, OpKind::SubSqSum},
      {"ElemChain",
       {{OpKind::Add, OpKind::Sub, OpKind::MulElem, OpKind::Square, OpKind::Sigmoid,
         OpKind::SoftShrink, OpKind::ScaleByScalar, OpKind::Abs},
        {OpKind::Add, OpKind::Sub, OpKind::MulElem, OpKind::Square, OpKind::Sigmoid,
         OpKind::SoftShrink, OpKind::ScaleByScalar, OpKind::Abs}},
       OpKind::ElemChain},
  };
  return kPatterns;
}

namespace {

std::set<std::string> root_set(const ExecutionGraph& g) {
  const auto roots = root_values(g);
  return {roots.begin(), roots.end()};
}

std::set<std::string> live_nodes(const ExecutionGraph& g) {
  std::set<std::string> live;
  std::vector<std::string> stack = root_values(g);
  while (!stack.empty()) {
    const std::string id = std::move(stack.back());
    stack.pop_back();
    const OpNode* n = g.find_node(id);
    if (!n || !live.insert(id).second) continue;
    for (const auto& in : n->inputs) stack.push_back(in);
  }
  return live;
}

/// Consumers among live nodes only; dead readers never block a fusion.
std::map<std::string, std::vector<std::string>> live_consumers(const ExecutionGraph& g,
                                                               const std::set<std::string>& live) {
  std::map<std::string, std::vector<std::string>> uses;
  for (const OpNode& n : g.nodes) {
    if (!live.count(n.id)) continue;
    for (const auto& in : n.inputs) {
      auto& list = uses[in];
      if (list.empty() || list.back() != n.id) list.push_back(n.id);
    }
  }
  return uses;
}

/// Removes the given nodes and any Derived var they defined.
void erase_nodes(ExecutionGraph& g, const std::set<std::string>& ids) {
  std::erase_if(g.nodes, [&](const OpNode& n) { return ids.count(n.id) > 0; });
  std::erase_if(g.vars, [&](const VarDecl& v) {
    return v.role == Role::Derived && ids.count(v.id) > 0;
  });
}

std::string unused_id(const ExecutionGraph& g, const std::string& base) {
  if (!g.has_value(base)) return base;
  for (std::size_t k = 1;; ++k) {
    std::string id = base + "_" + std::to_string(k);
    if (!g.has_value(id)) return id;
  }
}

std::optional<Shape> try_shape(const ExecutionGraph& g, OpKind kind,
                               const std::vector<std::string>& inputs, const NodeAttrs& attrs) {
  try {
    std::vector<Shape> shapes;
    for (const auto& in : inputs) shapes.push_back(g.shape_of(in));
    return infer_shape(kind, shapes, attrs, &g);
  } catch (const GraphError&) {
    return std::nullopt;
  }
}

bool contains(const std::vector<OpKind>& kinds, OpKind k) {
  return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
}

// --- rewrite ---------------------------------------------------------------

void fold_transposes(ExecutionGraph& g, PassReport& report) {
  for (OpNode& n : g.nodes) {
    if (n.kind != OpKind::MatMul) continue;
    const OpNode* left = g.find_node(n.inputs[0]);
    const OpNode* right = g.find_node(n.inputs[1]);
    if (left && left->kind == OpKind::Transpose) {
      n.kind = OpKind::TransposeMatMulLeft;
      n.inputs[0] = left->inputs[0];
      report.rewrites.push_back({"transpose-left", n.id});
    } else if (right && right->kind == OpKind::Transpose) {
      n.kind = OpKind::MatMulTransposeRight;
      n.inputs[1] = right->inputs[0];
      report.rewrites.push_back({"transpose-right", n.id});
    }
  }
}

// (Z*A^T -+ X)*B  ->  Z*(A^T*B) -+ X*B  with A, B, X invariant and Z not.
void distribute(ExecutionGraph& g, PassReport& report) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const OpNode outer = g.nodes[i];
    if (outer.kind != OpKind::MatMul) continue;
    const OpNode* sum = g.find_node(outer.inputs[0]);
    if (!sum || (sum->kind != OpKind::Sub && sum->kind != OpKind::Add)) continue;
    std::size_t side = 2;
    for (std::size_t j = 0; j < 2; ++j) {
      const OpNode* p = g.find_node(sum->inputs[j]);
      if (p && p->kind == OpKind::MatMulTransposeRight) side = j;
    }
    if (side == 2) continue;
    const OpNode& prod = *g.find_node(sum->inputs[side]);
    // Copies: the inserts below invalidate references into g.nodes.
    const std::string z = prod.inputs[0];
    const std::string a = prod.inputs[1];
    const std::string x = sum->inputs[1 - side];
    const std::string b = outer.inputs[1];
    const OpKind combine = sum->kind;
    if (g.shape_of(x) != prod.out_shape) continue;  // no broadcasting operand
    if (!g.is_invariant(a) || !g.is_invariant(b) || !g.is_invariant(x) || g.is_invariant(z)) {
      continue;
    }

    OpNode gram{unused_id(g, outer.id + ".gram"), OpKind::TransposeMatMulLeft, {a, b}, {}, {}};
    gram.out_shape = *try_shape(g, gram.kind, gram.inputs, gram.attrs);
    g.nodes.insert(g.nodes.begin() + static_cast<std::ptrdiff_t>(i), gram);
    OpNode zg{unused_id(g, outer.id + ".zg"), OpKind::MatMul, {z, gram.id}, {}, {}};
    zg.out_shape = *try_shape(g, zg.kind, zg.inputs, zg.attrs);
    g.nodes.insert(g.nodes.begin() + static_cast<std::ptrdiff_t>(i + 1), zg);
    OpNode xb{unused_id(g, outer.id + ".xb"), OpKind::MatMul, {x, b}, {}, {}};
    xb.out_shape = *try_shape(g, xb.kind, xb.inputs, xb.attrs);
    g.nodes.insert(g.nodes.begin() + static_cast<std::ptrdiff_t>(i + 2), xb);

    OpNode& rewritten = g.nodes[i + 3];
    rewritten.kind = combine;
    rewritten.inputs = side == 0 ? std::vector{zg.id, xb.id} : std::vector{xb.id, zg.id};
    report.rewrites.push_back({"distribute", rewritten.id});
    i += 3;
  }
}

// --- fusion ----------------------------------------------------------------

struct Match {
  std::vector<std::string> members;  // node order; the last is the root
  OpNode fused;
};

std::vector<Match> match_chains(const ExecutionGraph& g, const FusionPattern& pattern) {
  const auto live = live_nodes(g);
  const auto uses = live_consumers(g, live);
  const auto roots = root_set(g);
  std::set<std::string> taken;
  std::vector<Match> matches;
  for (const OpNode& start : g.nodes) {
    if (!contains(pattern.sequence[0], start.kind) || taken.count(start.id) || !live.count(start.id)) continue;
    std::vector<const OpNode*> chain{&start};
    for (std::size_t step = 1; step < pattern.sequence.size(); ++step) {
      const OpNode& cur = *chain.back();
      auto it = uses.find(cur.id);
      if (roots.count(cur.id) || it == uses.end() || it->second.size() != 1) break;
      const OpNode* next = g.find_node(it->second[0]);
      if (!contains(pattern.sequence[step], next->kind) || taken.count(next->id) ||
          next->preamble != start.preamble || next->inputs[0] != cur.id ||
          std::count(next->inputs.begin(), next->inputs.end(), cur.id) != 1) {
        break;
      }
      chain.push_back(next);
    }
    if (chain.size() != pattern.sequence.size()) continue;

    OpNode fused{chain.back()->id, pattern.replacement, {}, chain.back()->out_shape, {},
                 start.preamble};
    fused.inputs = start.inputs;
    for (std::size_t s = 1; s < chain.size(); ++s)
      fused.inputs.insert(fused.inputs.end(), chain[s]->inputs.begin() + 1, chain[s]->inputs.end());
    fused.attrs.product = start.kind;
    auto shape = try_shape(g, fused.kind, fused.inputs, fused.attrs);
    if (!shape || *shape != fused.out_shape) continue;

    Match m;
    for (const OpNode* n : chain) {
      m.members.push_back(n->id);
      taken.insert(n->id);
    }
    m.fused = std::move(fused);
    matches.push_back(std::move(m));
  }
  return matches;
}

std::vector<Match> match_elem_regions(const ExecutionGraph& g, const FusionPattern& pattern) {
  const auto live = live_nodes(g);
  const auto uses = live_consumers(g, live);
  const auto roots = root_set(g);
  std::set<std::string> taken;
  std::vector<Match> matches;
  auto accepts = [&](OpKind k) {
    return std::any_of(pattern.sequence.begin(), pattern.sequence.end(),
                       [&](const auto& step) { return contains(step, k); });
  };
  for (auto root = g.nodes.rbegin(); root != g.nodes.rend(); ++root) {
    if (!accepts(root->kind) || taken.count(root->id) || !live.count(root->id)) continue;
    std::set<std::string> region{root->id};
    std::vector<const OpNode*> frontier{&*root};
    while (!frontier.empty()) {
      const OpNode* m = frontier.back();
      frontier.pop_back();
      for (const auto& in : m->inputs) {
        const OpNode* p = g.find_node(in);
        if (!p || region.count(p->id) || taken.count(p->id) || !accepts(p->kind)) continue;
        auto it = uses.find(p->id);
        if (p->out_shape != root->out_shape || p->preamble != root->preamble ||
            roots.count(p->id) || it->second.size() != 1) {
          continue;
        }
        region.insert(p->id);
        frontier.push_back(p);
      }
    }
    if (region.size() < pattern.sequence.size()) continue;

    std::vector<const OpNode*> members;
    for (const OpNode& n : g.nodes)
      if (region.count(n.id)) members.push_back(&n);
    std::map<std::string, std::size_t> temp_of;
    OpNode fused{root->id, pattern.replacement, {}, root->out_shape, {}, root->preamble};
    for (const OpNode* n : members) {
      ElemInstr ins{n->kind, {}, n->attrs.theta};
      for (const auto& in : n->inputs) {
        if (auto t = temp_of.find(in); t != temp_of.end()) {
          ins.args.push_back({ElemOperand::Source::Temp, t->second});
          continue;
        }
        auto pos = std::find(fused.inputs.begin(), fused.inputs.end(), in);
        if (pos == fused.inputs.end()) pos = fused.inputs.insert(fused.inputs.end(), in);
        ins.args.push_back({ElemOperand::Source::Input,
                            static_cast<std::size_t>(pos - fused.inputs.begin())});
      }
      temp_of[n->id] = fused.attrs.program.size();
      fused.attrs.program.push_back(std::move(ins));
    }
    auto shape = try_shape(g, fused.kind, fused.inputs, fused.attrs);
    if (!shape || *shape != fused.out_shape) continue;

    Match m;
    for (const OpNode* n : members) {
      m.members.push_back(n->id);
      taken.insert(n->id);
    }
    m.fused = std::move(fused);
    matches.push_back(std::move(m));
  }
  std::reverse(matches.begin(), matches.end());
  return matches;
}

}  // namespace

PassResult rewrite_ops(ExecutionGraph graph) {
  PassReport report{"rewrite", {}, {}, {}, {}};
  fold_transposes(graph, report);
  distribute(graph, report);
  return {std::move(graph), std::move(report)};
}

PassResult hoist_invariants(ExecutionGraph graph) {
  PassReport report{"hoist", {}, {}, {}, {}};
  const auto live = live_nodes(graph);
  std::set<std::string> invariant;
  for (const VarDecl& v : graph.vars)
    if (v.role == Role::Constant) invariant.insert(v.id);
  for (OpNode& n : graph.nodes) {
    const bool inv = !n.inputs.empty() && std::all_of(n.inputs.begin(), n.inputs.end(),
                                                      [&](const auto& in) { return invariant.count(in) > 0; });
    if (inv) invariant.insert(n.id);
    const bool hoist = inv && live.count(n.id);
    if (hoist && !n.preamble) report.hoisted.push_back(n.id);
    n.preamble = hoist;
  }
  return {std::move(graph), std::move(report)};
}

PassResult fuse_methods(ExecutionGraph graph, const std::vector<FusionPattern>& patterns) {
  PassReport report{"fuse", {}, {}, {}, {}};
  for (const FusionPattern& pattern : patterns) {
    if (pattern.sequence.empty()) continue;
    const auto matches = pattern.replacement == OpKind::ElemChain
                             ? match_elem_regions(graph, pattern)
                             : match_chains(graph, pattern);
    std::set<std::string> gone;
    for (const Match& m : matches) {
      *graph.find_node(m.fused.id) = m.fused;
      gone.insert(m.members.begin(), m.members.end() - 1);
      report.fusions.push_back({pattern.name, m.members, m.fused.id});
    }
    // Dead nodes that read a fused-away value go with it.
    for (const OpNode& n : graph.nodes) {
      if (gone.count(n.id)) continue;
      if (std::any_of(n.inputs.begin(), n.inputs.end(), [&](const auto& in) { return gone.count(in) > 0; })) {
        gone.insert(n.id);
        report.removed.push_back(n.id);
      }
    }
    erase_nodes(graph, gone);
  }
  return {std::move(graph), std::move(report)};
}

PassResult dead_code_elim(ExecutionGraph graph) {
  PassReport report{"dce", {}, {}, {}, {}};
  const auto live = live_nodes(graph);
  std::set<std::string> dead;
  for (const OpNode& n : graph.nodes) {
    if (!live.count(n.id)) {
      dead.insert(n.id);
      report.removed.push_back(n.id);
    }
  }
  erase_nodes(graph, dead);
  return {std::move(graph), std::move(report)};
}

PipelineResult run_pipeline(ExecutionGraph graph, const PipelineOptions& options) {
  PipelineResult result{std::move(graph), {}};
  auto step = [&](bool enabled, auto pass) {
    if (!enabled) return;
    PassResult r = pass(std::move(result.graph));
    result.graph = std::move(r.graph);
    result.reports.push_back(std::move(r.report));
  };
  step(options.rewrite, [](ExecutionGraph g) { return rewrite_ops(std::move(g)); });
  step(options.hoist, [](ExecutionGraph g) { return hoist_invariants(std::move(g)); });
  step(options.fuse, [](ExecutionGraph g) { return fuse_methods(std::move(g)); });
  step(options.dce, [](ExecutionGraph g) { return dead_code_elim(std::move(g)); });
  return result;
}

}  // namespace nnc
