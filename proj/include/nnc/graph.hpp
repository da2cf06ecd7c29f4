// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Execution-graph IR: variables, operation nodes, state-update bindings and
// the convergence loop, plus the builder that enforces their invariants.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nnc/types.hpp"

namespace nnc {

struct Block {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  friend bool operator==(const Block&, const Block&) = default;
};

struct Coord {
  std::size_t row = 0;
  std::size_t col = 0;

  friend auto operator<=>(const Coord&, const Coord&) = default;
};

/// What is structurally nonzero in a matrix. Dense carries no data; a block
/// list holds non-overlapping rectangles; a coordinate list is strictly
/// sorted (row-major) and unique.
class SparsityPattern {
 public:
  SparsityPattern() = default;

  static SparsityPattern dense() { return {}; }
  static SparsityPattern block_list(std::vector<Block> blocks);
  /// Sorts the coordinates; duplicates are rejected.
  static SparsityPattern coords(std::vector<Coord> coords);

  bool is_dense() const { return std::holds_alternative<Dense>(rep_); }
  bool is_block_list() const { return std::holds_alternative<BlockList>(rep_); }
  bool is_coord() const { return std::holds_alternative<CoordList>(rep_); }

  const std::vector<Block>& blocks() const;
  const std::vector<Coord>& coord_list() const;

  /// Empty when the pattern is consistent with `shape`, else a reason.
  std::optional<std::string> check(Shape shape) const;

  std::size_t nonzeros(Shape shape) const;
  bool contains(std::size_t row, std::size_t col) const;
  /// Every structurally nonzero position, row-major.
  std::vector<Coord> positions(Shape shape) const;

  std::string kind_name() const;

  friend bool operator==(const SparsityPattern&, const SparsityPattern&) = default;

 private:
  struct Dense {
    friend bool operator==(const Dense&, const Dense&) = default;
  };
  struct BlockList {
    std::vector<Block> blocks;
    friend bool operator==(const BlockList&, const BlockList&) = default;
  };
  struct CoordList {
    std::vector<Coord> coords;
    friend bool operator==(const CoordList&, const CoordList&) = default;
  };

  std::variant<Dense, BlockList, CoordList> rep_;
};

enum class VarKind { DenseMatrix, SparseMatrix, Vector, Scalar };
enum class Role { Constant, State, Derived };

enum class OpKind {
  MatMul,
  TransposeMatMulLeft,   // A^T * B
  MatMulTransposeRight,  // A * B^T
  Transpose,
  Add,
  Sub,
  MulElem,
  BiasAddRow,
  Sigmoid,
  SoftShrink,
  ScaleByScalar,
  Square,
  Abs,
  SumRows,
  SumAll,
  MaskedMatMul,  // (A^T * B) evaluated only at the positions of a pattern
  // Installed by the fusion pass.
  MultBiasSigm,
  ElemChain,
  SubSqSum,
};

std::string_view to_string(VarKind kind);
std::string_view to_string(Role role);
std::string_view to_string(OpKind kind);
std::optional<VarKind> parse_var_kind(std::string_view name);
std::optional<Role> parse_role(std::string_view name);
std::optional<OpKind> parse_op_kind(std::string_view name);

bool is_matmul_family(OpKind kind);
bool is_elementwise(OpKind kind);
bool is_fused(OpKind kind);
/// Number of data inputs, or -1 when variable (ElemChain).
int arity(OpKind kind);

/// One step of a fused elementwise program. Operands name either an input of
/// the ElemChain node or the result of an earlier instruction.
struct ElemOperand {
  enum class Source { Input, Temp };
  Source source = Source::Input;
  std::size_t index = 0;

  friend bool operator==(const ElemOperand&, const ElemOperand&) = default;
};

struct ElemInstr {
  OpKind op = OpKind::Add;
  std::vector<ElemOperand> args;
  double theta = 0.0;

  friend bool operator==(const ElemInstr&, const ElemInstr&) = default;
};

struct VarDecl {
  std::string id;
  VarKind kind = VarKind::DenseMatrix;
  Shape shape;
  SparsityPattern pattern;
  Role role = Role::Constant;

  friend bool operator==(const VarDecl&, const VarDecl&) = default;
};

/// Per-kind node attributes.
struct NodeAttrs {
  double theta = 0.0;                     // SoftShrink threshold
  std::string pattern_of;                 // MaskedMatMul: var supplying the pattern
  OpKind product = OpKind::MatMul;        // MultBiasSigm: the fused product kind
  std::vector<ElemInstr> program;         // ElemChain

  friend bool operator==(const NodeAttrs&, const NodeAttrs&) = default;
};

struct OpNode {
  std::string id;
  OpKind kind = OpKind::MatMul;
  std::vector<std::string> inputs;
  Shape out_shape;
  NodeAttrs attrs;
  /// Set by invariant hoisting: evaluated once before the first iteration.
  bool preamble = false;

  friend bool operator==(const OpNode&, const OpNode&) = default;
};

struct ConvergenceSpec {
  std::string cost;
  double tol = 1e-6;
  std::size_t max_iters = 100;

  friend bool operator==(const ConvergenceSpec&, const ConvergenceSpec&) = default;
};

/// Guard in the normalized-difference stopping rule.
inline constexpr double kStopEpsilon = 1e-12;

/// Applies the stopping rule to a stream of per-iteration costs.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(double tol) : tol_(tol) {}

  /// Records the cost of the next iteration; true once the normalized
  /// difference to the previous cost drops strictly below tol.
  bool observe(double cost);
  std::size_t observed() const { return count_; }

 private:
  double tol_;
  double previous_ = 0.0;
  std::size_t count_ = 0;
};

/// The dataflow IR. Nodes are kept in a topological order. A Derived VarDecl
/// reserves an id (with kind and shape) that the node of the same id defines.
struct ExecutionGraph {
  std::vector<VarDecl> vars;
  std::vector<OpNode> nodes;
  std::map<std::string, std::string> updates;  // State var -> producing node
  std::vector<std::string> outputs;
  std::optional<ConvergenceSpec> convergence;

  const VarDecl* find_var(std::string_view id) const;
  const OpNode* find_node(std::string_view id) const;
  OpNode* find_node(std::string_view id);
  bool has_value(std::string_view id) const;
  /// Shape of a var or node output; throws GraphError for unknown ids.
  Shape shape_of(std::string_view id) const;
  /// True for Constant vars and for nodes all of whose transitive inputs are
  /// Constant.
  bool is_invariant(std::string_view id) const;
  std::size_t node_index(std::string_view id) const;

  friend bool operator==(const ExecutionGraph&, const ExecutionGraph&) = default;
};

/// Output shape for `kind` applied to inputs of the given shapes.
Shape infer_shape(OpKind kind, std::span<const Shape> inputs, const NodeAttrs& attrs,
                  const ExecutionGraph* graph = nullptr);

/// Structural pattern of every value: declared patterns for vars, inferred
/// for nodes (masked products carry their pattern, zero-preserving
/// elementwise ops over one shared pattern keep it, anything else is dense).
/// Pointers refer into the graph's VarDecls or to a shared dense pattern.
std::map<std::string, const SparsityPattern*> infer_patterns(const ExecutionGraph& graph);

struct Diagnostic {
  std::string id;
  std::string message;
};

/// Empty iff every ExecutionGraph invariant holds.
std::vector<Diagnostic> validate(const ExecutionGraph& graph);

/// Consumers of each value (distinct nodes), in node order.
std::map<std::string, std::vector<std::string>> consumers(const ExecutionGraph& graph);

/// Outputs, update producers and the cost: the values that must be
/// materialized.
std::vector<std::string> root_values(const ExecutionGraph& graph);

/// Two-phase builder: declare vars and nodes, bind updates, then attach the
/// convergence loop.
class GraphBuilder {
 public:
  const VarDecl& declare_var(std::string id, VarKind kind, Shape shape, Role role,
                             SparsityPattern pattern = SparsityPattern::dense());
  const OpNode& add_node(OpKind kind, std::vector<std::string> inputs, NodeAttrs attrs = {},
                         std::string id = {});
  void bind_update(const std::string& state_var, const std::string& node);
  void add_output(const std::string& id);
  const ConvergenceSpec& until_converged(const std::string& cost, double tol,
                                         std::size_t max_iters);

  const ExecutionGraph& graph() const { return graph_; }
  /// Validates and hands over the graph; throws GraphError listing every
  /// diagnostic.
  ExecutionGraph finish() &&;

  // Shorthands over add_node.
  std::string matmul(const std::string& a, const std::string& b, std::string id = {});
  std::string binary(OpKind kind, const std::string& a, const std::string& b,
                     std::string id = {});
  std::string unary(OpKind kind, const std::string& a, std::string id = {});

 private:
  std::string fresh_id();

  ExecutionGraph graph_;
  std::size_t counter_ = 0;
};

}  // namespace nnc
