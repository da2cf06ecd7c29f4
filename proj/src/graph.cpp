// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

namespace nnc {

// ---------------------------------------------------------------------------
// SparsityPattern
// ---------------------------------------------------------------------------

SparsityPattern SparsityPattern::block_list(std::vector<Block> blocks) {
  std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) {
    return std::tie(a.row0, a.col0, a.rows, a.cols) < std::tie(b.row0, b.col0, b.rows, b.cols);
  });
  SparsityPattern p;
  p.rep_ = BlockList{std::move(blocks)};
  return p;
}

SparsityPattern SparsityPattern::coords(std::vector<Coord> coords) {
  std::sort(coords.begin(), coords.end());
  if (std::adjacent_find(coords.begin(), coords.end()) != coords.end()) {
    throw GraphError("coordinate pattern contains duplicate entries");
  }
  SparsityPattern p;
  p.rep_ = CoordList{std::move(coords)};
  return p;
}

const std::vector<Block>& SparsityPattern::blocks() const {
  static const std::vector<Block> kNone;
  if (const auto* b = std::get_if<BlockList>(&rep_)) return b->blocks;
  return kNone;
}

const std::vector<Coord>& SparsityPattern::coord_list() const {
  static const std::vector<Coord> kNone;
  if (const auto* c = std::get_if<CoordList>(&rep_)) return c->coords;
  return kNone;
}

std::optional<std::string> SparsityPattern::check(Shape shape) const {
  if (const auto* bl = std::get_if<BlockList>(&rep_)) {
    std::vector<unsigned char> covered(shape.size(), 0);
    for (const Block& b : bl->blocks) {
      if (b.rows == 0 || b.cols == 0) return "empty block in block list";
      if (b.row0 + b.rows > shape.rows || b.col0 + b.cols > shape.cols) {
        return "block (" + std::to_string(b.row0) + "," + std::to_string(b.col0) + "," +
               std::to_string(b.rows) + "," + std::to_string(b.cols) + ") exceeds shape " +
               shape.str();
      }
      for (std::size_t r = b.row0; r < b.row0 + b.rows; ++r) {
        for (std::size_t c = b.col0; c < b.col0 + b.cols; ++c) {
          auto& cell = covered[r * shape.cols + c];
          if (cell) {
            return "blocks overlap at (" + std::to_string(r) + "," + std::to_string(c) + ")";
          }
          cell = 1;
        }
      }
    }
  } else if (const auto* cl = std::get_if<CoordList>(&rep_)) {
    for (std::size_t i = 0; i < cl->coords.size(); ++i) {
      const Coord& c = cl->coords[i];
      if (c.row >= shape.rows || c.col >= shape.cols) {
        return "coordinate (" + std::to_string(c.row) + "," + std::to_string(c.col) +
               ") exceeds shape " + shape.str();
      }
      if (i > 0 && !(cl->coords[i - 1] < c)) return "coordinates not strictly sorted";
    }
  }
  return std::nullopt;
}

std::size_t SparsityPattern::nonzeros(Shape shape) const {
  if (is_dense()) return shape.size();
  if (const auto* bl = std::get_if<BlockList>(&rep_)) {
    std::size_t n = 0;
    for (const Block& b : bl->blocks) n += b.rows * b.cols;
    return n;
  }
  return coord_list().size();
}

bool SparsityPattern::contains(std::size_t row, std::size_t col) const {
  if (is_dense()) return true;
  if (const auto* bl = std::get_if<BlockList>(&rep_)) {
    return std::any_of(bl->blocks.begin(), bl->blocks.end(), [&](const Block& b) {
      return row >= b.row0 && row < b.row0 + b.rows && col >= b.col0 && col < b.col0 + b.cols;
    });
  }
  const auto& c = coord_list();
  return std::binary_search(c.begin(), c.end(), Coord{row, col});
}

std::vector<Coord> SparsityPattern::positions(Shape shape) const {
  std::vector<Coord> out;
  if (is_dense()) {
    out.reserve(shape.size());
    for (std::size_t r = 0; r < shape.rows; ++r)
      for (std::size_t c = 0; c < shape.cols; ++c) out.push_back({r, c});
    return out;
  }
  if (is_coord()) return coord_list();
  for (const Block& b : blocks())
    for (std::size_t r = b.row0; r < b.row0 + b.rows; ++r)
      for (std::size_t c = b.col0; c < b.col0 + b.cols; ++c) out.push_back({r, c});
  std::sort(out.begin(), out.end());
  return out;
}

std::string SparsityPattern::kind_name() const {
  if (is_dense()) return "dense";
  return is_block_list() ? "blocks" : "coords";
}

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 19> kOpNames{{
    {OpKind::MatMul, "MatMul"},
    {OpKind::TransposeMatMulLeft, "TransposeMatMulLeft"},
    {OpKind::MatMulTransposeRight, "MatMulTransposeRight"},
    {OpKind::Transpose, "Transpose"},
    {OpKind::Add, "Add"},
    {OpKind::Sub, "Sub"},
    {OpKind::MulElem, "MulElem"},
    {OpKind::BiasAddRow, "BiasAddRow"},
    {OpKind::Sigmoid, "Sigmoid"},
    {OpKind::SoftShrink, "SoftShrink"},
    {OpKind::ScaleByScalar, "ScaleByScalar"},
    {OpKind::Square, "Square"},
    {OpKind::Abs, "Abs"},
    {OpKind::SumRows, "SumRows"},
    {OpKind::SumAll, "SumAll"},
    {OpKind::MaskedMatMul, "MaskedMatMul"},
    {OpKind::MultBiasSigm, "MultBiasSigm"},
    {OpKind::ElemChain, "ElemChain"},
    {OpKind::SubSqSum, "SubSqSum"},
}};

constexpr std::array<std::pair<VarKind, std::string_view>, 4> kVarKindNames{{
    {VarKind::DenseMatrix, "DenseMatrix"},
    {VarKind::SparseMatrix, "SparseMatrix"},
    {VarKind::Vector, "Vector"},
    {VarKind::Scalar, "Scalar"},
}};

constexpr std::array<std::pair<Role, std::string_view>, 3> kRoleNames{{
    {Role::Constant, "constant"},
    {Role::State, "state"},
    {Role::Derived, "derived"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E value) {
  for (const auto& [e, name] : table)
    if (e == value) return name;
  return "?";
}

template <typename E, std::size_t N>
std::optional<E> parse_name(const std::array<std::pair<E, std::string_view>, N>& table,
                            std::string_view name) {
  for (const auto& [e, n] : table)
    if (n == name) return e;
  return std::nullopt;
}

}  // namespace

std::string_view to_string(VarKind kind) { return name_of(kVarKindNames, kind); }
std::string_view to_string(Role role) { return name_of(kRoleNames, role); }
std::string_view to_string(OpKind kind) { return name_of(kOpNames, kind); }
std::optional<VarKind> parse_var_kind(std::string_view name) { return parse_name(kVarKindNames, name); }
std::optional<Role> parse_role(std::string_view name) { return parse_name(kRoleNames, name); }
std::optional<OpKind> parse_op_kind(std::string_view name) { return parse_name(kOpNames, name); }

bool is_matmul_family(OpKind kind) {
  switch (kind) {
    case OpKind::MatMul:
    case OpKind::TransposeMatMulLeft:
    case OpKind::MatMulTransposeRight:
    case OpKind::MaskedMatMul:
    case OpKind::MultBiasSigm:
      return true;
    default:
      return false;
  }
}

bool is_elementwise(OpKind kind) {
  switch (kind) {
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::MulElem:
    case OpKind::Square:
    case OpKind::Sigmoid:
    case OpKind::SoftShrink:
    case OpKind::ScaleByScalar:
    case OpKind::Abs:
      return true;
    default:
      return false;
  }
}

bool is_fused(OpKind kind) {
  return kind == OpKind::MultBiasSigm || kind == OpKind::ElemChain || kind == OpKind::SubSqSum;
}

int arity(OpKind kind) {
  switch (kind) {
    case OpKind::Transpose:
    case OpKind::Sigmoid:
    case OpKind::SoftShrink:
    case OpKind::Square:
    case OpKind::Abs:
    case OpKind::SumRows:
    case OpKind::SumAll:
      return 1;
    case OpKind::MultBiasSigm:
      return 3;
    case OpKind::ElemChain:
      return -1;
    default:
      return 2;
  }
}

// ---------------------------------------------------------------------------
// ConvergenceMonitor
// ---------------------------------------------------------------------------

bool ConvergenceMonitor::observe(double cost) {
  ++count_;
  if (count_ == 1) {
    previous_ = cost;
    return false;
  }
  const double diff = std::abs(cost - previous_) / std::max(std::abs(previous_), kStopEpsilon);
  previous_ = cost;
  return diff < tol_;
}

// ---------------------------------------------------------------------------
// ExecutionGraph
// ---------------------------------------------------------------------------

const VarDecl* ExecutionGraph::find_var(std::string_view id) const {
  for (const auto& v : vars)
    if (v.id == id) return &v;
  return nullptr;
}

const OpNode* ExecutionGraph::find_node(std::string_view id) const {
  for (const auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

OpNode* ExecutionGraph::find_node(std::string_view id) {
  for (auto& n : nodes)
    if (n.id == id) return &n;
  return nullptr;
}

bool ExecutionGraph::has_value(std::string_view id) const {
  if (find_node(id)) return true;
  const VarDecl* v = find_var(id);
  return v && v->role != Role::Derived;
}

Shape ExecutionGraph::shape_of(std::string_view id) const {
  if (const OpNode* n = find_node(id)) return n->out_shape;
  if (const VarDecl* v = find_var(id)) return v->shape;
  throw GraphError("unknown value '" + std::string(id) + "'");
}

bool ExecutionGraph::is_invariant(std::string_view id) const {
  std::map<std::string, bool, std::less<>> memo;
  std::function<bool(std::string_view)> rec = [&](std::string_view v) -> bool {
    if (auto it = memo.find(v); it != memo.end()) return it->second;
    bool result = false;
    if (const OpNode* n = find_node(v)) {
      result = !n->inputs.empty() &&
               std::all_of(n->inputs.begin(), n->inputs.end(), [&](const std::string& in) {
                 return rec(in);
               });
    } else if (const VarDecl* d = find_var(v)) {
      result = d->role == Role::Constant;
    }
    memo.emplace(std::string(v), result);
    return result;
  };
  return rec(id);
}

std::size_t ExecutionGraph::node_index(std::string_view id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return i;
  throw GraphError("unknown node '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------
// Shape inference
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void shape_fail(OpKind kind, std::span<const Shape> in, const std::string& why) {
  std::ostringstream os;
  os << to_string(kind) << "(";
  for (std::size_t i = 0; i < in.size(); ++i) os << (i ? ", " : "") << in[i].str();
  os << "): " << why;
  throw GraphError(os.str());
}

Shape elementwise_shape(OpKind kind, std::span<const Shape> in, double theta) {
  switch (kind) {
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::MulElem:
      if (in[0] == in[1]) return in[0];
      if (in[0].is_scalar()) return in[1];
      if (in[1].is_scalar()) return in[0];
      shape_fail(kind, in, "operand shapes differ");
    case OpKind::ScaleByScalar:
      if (!in[0].is_scalar()) shape_fail(kind, in, "first operand must be 1x1");
      return in[1];
    case OpKind::SoftShrink:
      if (!(theta >= 0.0) || !std::isfinite(theta)) {
        shape_fail(kind, in, "threshold must be a finite nonnegative number");
      }
      return in[0];
    case OpKind::Sigmoid:
    case OpKind::Square:
    case OpKind::Abs:
      return in[0];
    default:
      shape_fail(kind, in, "not an elementwise kind");
  }
}

Shape product_shape(OpKind kind, Shape a, Shape b) {
  const std::array<Shape, 2> in{a, b};
  switch (kind) {
    case OpKind::MatMul:
      if (a.cols != b.rows) shape_fail(kind, in, "inner dimensions differ");
      return {a.rows, b.cols};
    case OpKind::TransposeMatMulLeft:
      if (a.rows != b.rows) shape_fail(kind, in, "row counts differ");
      return {a.cols, b.cols};
    case OpKind::MatMulTransposeRight:
      if (a.cols != b.cols) shape_fail(kind, in, "column counts differ");
      return {a.rows, b.rows};
    default:
      shape_fail(kind, in, "not a product kind");
  }
}

}  // namespace

Shape infer_shape(OpKind kind, std::span<const Shape> in, const NodeAttrs& attrs,
                  const ExecutionGraph* graph) {
  const int n = arity(kind);
  if (n >= 0 && in.size() != static_cast<std::size_t>(n)) {
    shape_fail(kind, in, "expected " + std::to_string(n) + " inputs");
  }
  switch (kind) {
    case OpKind::MatMul:
    case OpKind::TransposeMatMulLeft:
    case OpKind::MatMulTransposeRight:
      return product_shape(kind, in[0], in[1]);
    case OpKind::Transpose:
      return {in[0].cols, in[0].rows};
    case OpKind::BiasAddRow:
      if (in[1].rows != 1 || in[1].cols != in[0].cols) {
        shape_fail(kind, in, "bias must be 1x" + std::to_string(in[0].cols));
      }
      return in[0];
    case OpKind::SumRows:
      return {1, in[0].cols};
    case OpKind::SumAll:
      return {1, 1};
    case OpKind::MaskedMatMul: {
      if (in[0].rows != in[1].rows) shape_fail(kind, in, "row counts differ");
      const Shape out{in[0].cols, in[1].cols};
      if (graph) {
        const VarDecl* p = graph->find_var(attrs.pattern_of);
        if (!p || p->role == Role::Derived) {
          shape_fail(kind, in, "pattern source '" + attrs.pattern_of + "' is not a declared var");
        }
        if (p->shape != out) {
          shape_fail(kind, in, "pattern source '" + p->id + "' has shape " + p->shape.str());
        }
      }
      return out;
    }
    case OpKind::MultBiasSigm: {
      if (!is_matmul_family(attrs.product) || attrs.product == OpKind::MaskedMatMul ||
          attrs.product == OpKind::MultBiasSigm) {
        shape_fail(kind, in, "invalid fused product kind");
      }
      const Shape out = product_shape(attrs.product, in[0], in[1]);
      if (in[2].rows != 1 || in[2].cols != out.cols) {
        shape_fail(kind, in, "bias must be 1x" + std::to_string(out.cols));
      }
      return out;
    }
    case OpKind::SubSqSum:
      if (in[0] != in[1]) shape_fail(kind, in, "operand shapes differ");
      return {1, 1};
    case OpKind::ElemChain: {
      if (attrs.program.empty()) shape_fail(kind, in, "empty program");
      std::vector<Shape> temps;
      for (const ElemInstr& ins : attrs.program) {
        if (!is_elementwise(ins.op)) shape_fail(kind, in, "program holds a non-elementwise op");
        const int na = arity(ins.op);
        if (ins.args.size() != static_cast<std::size_t>(na)) {
          shape_fail(kind, in, "program instruction has wrong operand count");
        }
        std::vector<Shape> args;
        for (const ElemOperand& a : ins.args) {
          if (a.source == ElemOperand::Source::Input) {
            if (a.index >= in.size()) shape_fail(kind, in, "program references a missing input");
            args.push_back(in[a.index]);
          } else {
            if (a.index >= temps.size()) shape_fail(kind, in, "program references a later temp");
            args.push_back(temps[a.index]);
          }
        }
        temps.push_back(elementwise_shape(ins.op, args, ins.theta));
      }
      return temps.back();
    }
    default:
      return elementwise_shape(kind, in, attrs.theta);
  }
}

// ---------------------------------------------------------------------------
// Pattern inference
// ---------------------------------------------------------------------------

namespace {

const SparsityPattern& dense_pattern() {
  static const SparsityPattern kDense;
  return kDense;
}

bool same_pattern(const SparsityPattern* a, const SparsityPattern* b) {
  return a == b || *a == *b;
}

/// Pattern of an elementwise result. Operands flagged scalar broadcast.
const SparsityPattern* elementwise_pattern(OpKind op, std::span<const SparsityPattern* const> pats,
                                           std::span<const bool> scalar) {
  const SparsityPattern* dense = &dense_pattern();
  switch (op) {
    case OpKind::Sigmoid:
      return dense;
    case OpKind::SoftShrink:
    case OpKind::Square:
    case OpKind::Abs:
      return scalar[0] ? dense : pats[0];
    case OpKind::ScaleByScalar:
      return scalar[1] ? dense : pats[1];
    case OpKind::MulElem:
      if (scalar[0] && scalar[1]) return dense;
      if (scalar[0]) return pats[1];
      if (scalar[1]) return pats[0];
      return same_pattern(pats[0], pats[1]) ? pats[0] : dense;
    case OpKind::Add:
    case OpKind::Sub:
      if (scalar[0] || scalar[1]) return dense;
      return same_pattern(pats[0], pats[1]) ? pats[0] : dense;
    default:
      return dense;
  }
}

}  // namespace

std::map<std::string, const SparsityPattern*> infer_patterns(const ExecutionGraph& graph) {
  std::map<std::string, const SparsityPattern*> out;
  const SparsityPattern* dense = &dense_pattern();
  for (const VarDecl& v : graph.vars) {
    if (v.role != Role::Derived) out[v.id] = v.kind == VarKind::SparseMatrix ? &v.pattern : dense;
  }
  auto lookup = [&](const std::string& id) {
    auto it = out.find(id);
    return it == out.end() ? dense : it->second;
  };
  for (const OpNode& n : graph.nodes) {
    const SparsityPattern* p = dense;
    if (n.kind == OpKind::MaskedMatMul) {
      const VarDecl* src = graph.find_var(n.attrs.pattern_of);
      if (src && src->kind == VarKind::SparseMatrix) p = &src->pattern;
    } else if (is_elementwise(n.kind)) {
      std::vector<const SparsityPattern*> pats;
      std::vector<char> scalar;
      for (const auto& in : n.inputs) {
        pats.push_back(lookup(in));
        scalar.push_back(graph.has_value(in) && graph.shape_of(in).is_scalar());
      }
      std::array<bool, 2> sc{scalar.size() > 0 && scalar[0], scalar.size() > 1 && scalar[1]};
      if (pats.size() == static_cast<std::size_t>(arity(n.kind))) {
        p = elementwise_pattern(n.kind, pats, std::span<const bool>(sc.data(), pats.size()));
      }
    } else if (n.kind == OpKind::ElemChain) {
      std::vector<const SparsityPattern*> temps;
      std::vector<bool> temp_scalar;
      bool ok = true;
      for (const ElemInstr& ins : n.attrs.program) {
        std::vector<const SparsityPattern*> pats;
        std::array<bool, 2> sc{false, false};
        for (std::size_t a = 0; a < ins.args.size() && a < 2; ++a) {
          const ElemOperand& op = ins.args[a];
          if (op.source == ElemOperand::Source::Input && op.index < n.inputs.size()) {
            const auto& in = n.inputs[op.index];
            pats.push_back(lookup(in));
            sc[a] = graph.has_value(in) && graph.shape_of(in).is_scalar();
          } else if (op.source == ElemOperand::Source::Temp && op.index < temps.size()) {
            pats.push_back(temps[op.index]);
            sc[a] = temp_scalar[op.index];
          } else {
            ok = false;
          }
        }
        if (!ok || pats.size() != static_cast<std::size_t>(arity(ins.op))) {
          ok = false;
          break;
        }
        temps.push_back(elementwise_pattern(ins.op, pats, std::span<const bool>(sc.data(), pats.size())));
        const bool s = ins.args.size() == 1 ? sc[0] : (ins.op == OpKind::ScaleByScalar ? sc[1] : sc[0] && sc[1]);
        temp_scalar.push_back(s);
      }
      if (ok && !temps.empty()) p = temps.back();
    }
    out[n.id] = p;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

std::optional<std::string> check_var(const VarDecl& v) {
  if (v.id.empty()) return "empty id";
  if (v.shape.rows == 0 || v.shape.cols == 0) return "shape must be at least 1x1";
  if (v.kind == VarKind::Scalar && !v.shape.is_scalar()) return "Scalar must be 1x1";
  if (v.kind == VarKind::Vector && v.shape.rows != 1) return "Vector must have one row";
  if (v.kind == VarKind::SparseMatrix) {
    if (v.pattern.is_dense()) return "SparseMatrix requires a block-list or coordinate pattern";
    if (auto why = v.pattern.check(v.shape)) return *why;
  } else if (!v.pattern.is_dense()) {
    return "pattern given for non-sparse kind " + std::string(to_string(v.kind));
  }
  return std::nullopt;
}

}  // namespace

std::vector<Diagnostic> validate(const ExecutionGraph& g) {
  std::vector<Diagnostic> diags;
  auto report = [&](const std::string& id, std::string msg) { diags.push_back({id, std::move(msg)}); };

  std::set<std::string> var_ids;
  for (const VarDecl& v : g.vars) {
    if (!var_ids.insert(v.id).second) report(v.id, "duplicate var id");
    if (auto why = check_var(v)) report(v.id, *why);
  }

  std::set<std::string> defined;  // values available so far in node order
  for (const VarDecl& v : g.vars)
    if (v.role != Role::Derived) defined.insert(v.id);

  std::set<std::string> node_ids;
  for (const OpNode& n : g.nodes) {
    if (n.id.empty()) {
      report(n.id, "node with empty id");
      continue;
    }
    if (!node_ids.insert(n.id).second) {
      report(n.id, "duplicate node id");
      continue;
    }
    const VarDecl* shadow = g.find_var(n.id);
    if (shadow && shadow->role != Role::Derived) {
      report(n.id, "node id collides with a declared var");
      continue;
    }
    bool inputs_ok = true;
    for (const auto& in : n.inputs) {
      if (defined.count(in)) continue;
      inputs_ok = false;
      if (g.find_node(in)) {
        report(n.id, "input '" + in + "' is not computed before this node (cycle or order)");
      } else {
        report(n.id, "input '" + in + "' does not resolve");
      }
      break;
    }
    if (inputs_ok) {
      try {
        std::vector<Shape> shapes;
        for (const auto& in : n.inputs) shapes.push_back(g.shape_of(in));
        const Shape s = infer_shape(n.kind, shapes, n.attrs, &g);
        if (s != n.out_shape) {
          report(n.id, "out_shape " + n.out_shape.str() + " differs from inferred " + s.str());
        }
      } catch (const GraphError& e) {
        report(n.id, e.what());
      }
    }
    if (shadow && shadow->shape != n.out_shape) {
      report(n.id, "derived var shape " + shadow->shape.str() + " differs from node shape");
    }
    defined.insert(n.id);
  }

  for (const VarDecl& v : g.vars) {
    if (v.role == Role::Derived && !g.find_node(v.id)) {
      report(v.id, "derived var is never defined by a node");
    }
  }

  const auto patterns = infer_patterns(g);
  for (const auto& [target, producer] : g.updates) {
    const VarDecl* v = g.find_var(target);
    if (!v) {
      report(target, "update target is not a declared var");
      continue;
    }
    if (v->role != Role::State) {
      report(target, "update target has role " + std::string(to_string(v->role)) + ", not state");
      continue;
    }
    const OpNode* n = g.find_node(producer);
    if (!n) {
      report(target, "update producer '" + producer + "' is not a node");
      continue;
    }
    if (n->out_shape != v->shape) {
      report(target, "update producer shape " + n->out_shape.str() + " differs from " +
                         v->shape.str());
      continue;
    }
    const SparsityPattern& declared = v->kind == VarKind::SparseMatrix ? v->pattern : SparsityPattern{};
    auto it = patterns.find(producer);
    if (it == patterns.end() || !(*it->second == declared)) {
      report(target, "update producer '" + producer + "' does not preserve the var's pattern");
    }
  }
  for (const VarDecl& v : g.vars) {
    if (v.role == Role::State && !g.updates.count(v.id)) {
      report(v.id, "state var has no update binding");
    }
  }

  for (const auto& out : g.outputs) {
    if (!g.has_value(out)) report(out, "output does not name a declared value");
  }

  if (!g.convergence) {
    report("", "no convergence loop attached");
  } else {
    const ConvergenceSpec& c = *g.convergence;
    const OpNode* n = g.find_node(c.cost);
    if (!n) {
      report(c.cost, "cost must be a derived value");
    } else if (!n->out_shape.is_scalar()) {
      report(c.cost, "cost must be 1x1");
    }
    if (!(c.tol > 0.0)) report(c.cost, "tolerance must be positive");
    if (c.max_iters == 0) report(c.cost, "max_iters must be positive");
  }
  return diags;
}

std::map<std::string, std::vector<std::string>> consumers(const ExecutionGraph& g) {
  std::map<std::string, std::vector<std::string>> out;
  for (const OpNode& n : g.nodes) {
    for (const auto& in : n.inputs) {
      auto& list = out[in];
      if (list.empty() || list.back() != n.id) list.push_back(n.id);
    }
  }
  return out;
}

std::vector<std::string> root_values(const ExecutionGraph& g) {
  std::vector<std::string> roots;
  auto add = [&](const std::string& id) {
    if (std::find(roots.begin(), roots.end(), id) == roots.end()) roots.push_back(id);
  };
  for (const auto& o : g.outputs) add(o);
  for (const auto& [target, producer] : g.updates) add(producer);
  if (g.convergence) add(g.convergence->cost);
  return roots;
}

// ---------------------------------------------------------------------------
// GraphBuilder
// ---------------------------------------------------------------------------

namespace {

void require_open(const ExecutionGraph& g, const char* what) {
  if (g.convergence) {
    throw GraphError(std::string(what) + ": convergence loop already attached; the loop body is "
                     "closed");
  }
}

}  // namespace

const VarDecl& GraphBuilder::declare_var(std::string id, VarKind kind, Shape shape, Role role,
                                         SparsityPattern pattern) {
  require_open(graph_, "declare_var");
  if (graph_.find_var(id) || graph_.find_node(id)) {
    throw GraphError("declare_var: id '" + id + "' already in use");
  }
  VarDecl v{std::move(id), kind, shape, std::move(pattern), role};
  if (auto why = check_var(v)) throw GraphError("declare_var '" + v.id + "': " + *why);
  graph_.vars.push_back(std::move(v));
  return graph_.vars.back();
}

std::string GraphBuilder::fresh_id() {
  std::string id;
  do {
    id = "n" + std::to_string(counter_++);
  } while (graph_.find_var(id) || graph_.find_node(id));
  return id;
}

const OpNode& GraphBuilder::add_node(OpKind kind, std::vector<std::string> inputs, NodeAttrs attrs,
                                     std::string id) {
  require_open(graph_, "add_node");
  if (id.empty()) id = fresh_id();
  if (graph_.find_node(id)) throw GraphError("add_node: id '" + id + "' already in use");
  const VarDecl* reserved = graph_.find_var(id);
  if (reserved && reserved->role != Role::Derived) {
    throw GraphError("add_node: id '" + id + "' names a declared var");
  }
  std::vector<Shape> shapes;
  for (const auto& in : inputs) {
    if (in == id) throw GraphError("add_node '" + id + "': node would consume itself (cycle)");
    if (!graph_.has_value(in)) throw GraphError("add_node '" + id + "': unknown input '" + in + "'");
    shapes.push_back(graph_.shape_of(in));
  }
  OpNode node{id, kind, std::move(inputs), {}, std::move(attrs), false};
  try {
    node.out_shape = infer_shape(kind, shapes, node.attrs, &graph_);
  } catch (const GraphError& e) {
    throw GraphError("add_node '" + id + "': " + e.what());
  }
  if (reserved && reserved->shape != node.out_shape) {
    throw GraphError("add_node '" + id + "': derived var declared " + reserved->shape.str() +
                     " but node produces " + node.out_shape.str());
  }
  graph_.nodes.push_back(std::move(node));
  return graph_.nodes.back();
}

void GraphBuilder::bind_update(const std::string& state_var, const std::string& node) {
  require_open(graph_, "bind_update");
  const VarDecl* v = graph_.find_var(state_var);
  if (!v) throw GraphError("bind_update: unknown var '" + state_var + "'");
  if (v->role != Role::State) throw GraphError("bind_update: '" + state_var + "' is not a state var");
  if (graph_.updates.count(state_var)) {
    throw GraphError("bind_update: '" + state_var + "' is already bound");
  }
  const OpNode* n = graph_.find_node(node);
  if (!n) throw GraphError("bind_update: unknown node '" + node + "'");
  if (n->out_shape != v->shape) {
    throw GraphError("bind_update: '" + node + "' produces " + n->out_shape.str() + " but '" +
                     state_var + "' is " + v->shape.str());
  }
  const auto patterns = infer_patterns(graph_);
  const SparsityPattern declared = v->kind == VarKind::SparseMatrix ? v->pattern : SparsityPattern{};
  if (!(*patterns.at(node) == declared)) {
    throw GraphError("bind_update: '" + node + "' does not preserve the pattern of '" + state_var +
                     "'");
  }
  graph_.updates.emplace(state_var, node);
}

void GraphBuilder::add_output(const std::string& id) {
  require_open(graph_, "add_output");
  if (!graph_.has_value(id)) throw GraphError("add_output: unknown value '" + id + "'");
  if (std::find(graph_.outputs.begin(), graph_.outputs.end(), id) == graph_.outputs.end()) {
    graph_.outputs.push_back(id);
  }
}

const ConvergenceSpec& GraphBuilder::until_converged(const std::string& cost, double tol,
                                                     std::size_t max_iters) {
  require_open(graph_, "until_converged");
  const OpNode* n = graph_.find_node(cost);
  if (!n) throw GraphError("until_converged: cost '" + cost + "' is not a derived value");
  if (!n->out_shape.is_scalar()) {
    throw GraphError("until_converged: cost '" + cost + "' is " + n->out_shape.str() + ", not 1x1");
  }
  if (!(tol > 0.0) || !std::isfinite(tol)) throw GraphError("until_converged: tol must be positive");
  if (max_iters == 0) throw GraphError("until_converged: max_iters must be positive");
  graph_.convergence = ConvergenceSpec{cost, tol, max_iters};
  return *graph_.convergence;
}

ExecutionGraph GraphBuilder::finish() && {
  auto diags = validate(graph_);
  if (!diags.empty()) {
    std::string msg = "invalid graph:";
    for (const auto& d : diags) msg += "\n  [" + d.id + "] " + d.message;
    throw GraphError(msg);
  }
  return std::move(graph_);
}

std::string GraphBuilder::matmul(const std::string& a, const std::string& b, std::string id) {
  return add_node(OpKind::MatMul, {a, b}, {}, std::move(id)).id;
}

std::string GraphBuilder::binary(OpKind kind, const std::string& a, const std::string& b,
                                 std::string id) {
  return add_node(kind, {a, b}, {}, std::move(id)).id;
}

std::string GraphBuilder::unary(OpKind kind, const std::string& a, std::string id) {
  return add_node(kind, {a}, {}, std::move(id)).id;
}

}  // namespace nnc
