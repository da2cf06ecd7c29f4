// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/exec.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <sstream>

#include "nnc/kernels.hpp"
#include "nnc/pool.hpp"

namespace nnc {

std::string_view to_string(StopReason reason) {
  return reason == StopReason::Converged ? "converged" : "max_iters";
}

const StorageDecision& Plan::decision(std::string_view id) const {
  for (const auto& d : decisions)
    if (d.var == id) return d;
  throw ExecError("no storage decision for '" + std::string(id) + "'");
}

namespace {

bool single_task(OpKind kind) { return kind == OpKind::SumAll || kind == OpKind::SubSqSum; }

const SparsityPattern& declared_pattern(const VarDecl& v) {
  static const SparsityPattern kDense;
  return v.kind == VarKind::SparseMatrix ? v.pattern : kDense;
}

std::size_t unit_count(const OpNode& n, const SparsityPattern& pattern, const StorageDecision& d) {
  if (single_task(n.kind)) return 1;
  const PackedMatrix probe(n.out_shape, pattern, d);
  return std::max<std::size_t>(1, probe.blocks().size());
}

}  // namespace

Plan lower(ExecutionGraph graph, std::vector<StorageDecision> decisions, Selection selection) {
  if (selection.threads == 0 || selection.block == 0) throw ExecError("selection must have b, t >= 1");
  if (auto diags = validate(graph); !diags.empty()) {
    throw ExecError("cannot lower an invalid graph: " + diags.front().id + ": " + diags.front().message);
  }
  Plan plan{std::move(graph), std::move(decisions), selection, {}, {}};
  const ExecutionGraph& g = plan.graph;
  for (const auto& d : plan.decisions) {
    if (d.block != selection.block) {
      throw ExecError("decision for '" + d.var + "' has block " + std::to_string(d.block) +
                      ", plan block is " + std::to_string(selection.block));
    }
  }
  for (const VarDecl& v : g.vars)
    if (v.role != Role::Derived) plan.decision(v.id);

  const auto patterns = infer_patterns(g);
  std::map<std::string, std::size_t> level;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const OpNode& n = g.nodes[i];
    std::size_t lv = 0;
    for (const auto& in : n.inputs) {
      const OpNode* p = g.find_node(in);
      if (n.preamble) {
        const VarDecl* v = g.find_var(in);
        if ((p && !p->preamble) || (!p && v && v->role != Role::Constant)) {
          throw ExecError("preamble node '" + n.id + "' reads per-iteration value '" + in + "'");
        }
      }
      if (p && p->preamble == n.preamble) lv = std::max(lv, level.at(in) + 1);
    }
    level[n.id] = lv;
    auto& phases = n.preamble ? plan.preamble : plan.body;
    if (phases.size() <= lv) phases.resize(lv + 1);
    const std::size_t units = unit_count(n, *patterns.at(n.id), plan.decision(n.id));
    for (std::size_t u = 0; u < units; ++u) phases[lv].tasks.push_back({i, u, 0});
  }
  for (auto* part : {&plan.preamble, &plan.body})
    for (Phase& ph : *part)
      for (std::size_t k = 0; k < ph.tasks.size(); ++k) ph.tasks[k].worker = k % selection.threads;
  return plan;
}

std::vector<std::string> Plan::describe() const {
  std::vector<std::string> lines;
  auto emit = [&](const char* part, const std::vector<Phase>& phases) {
    for (std::size_t p = 0; p < phases.size(); ++p) {
      std::ostringstream os;
      os << "phase " << part << " " << p << ":";
      const auto& tasks = phases[p].tasks;
      for (std::size_t i = 0; i < tasks.size();) {
        std::size_t j = i;
        while (j + 1 < tasks.size() && tasks[j + 1].node == tasks[i].node) ++j;
        os << " " << graph.nodes[tasks[i].node].id << "[" << tasks[i].unit;
        if (j > i) os << ".." << tasks[j].unit;
        os << "]";
        i = j + 1;
      }
      lines.push_back(os.str());
    }
  };
  emit("preamble", preamble);
  emit("body", body);
  return lines;
}

std::vector<std::string> check_phase_safety(const Plan& plan) {
  std::vector<std::string> issues;
  auto check = [&](const char* part, const std::vector<Phase>& phases) {
    for (std::size_t p = 0; p < phases.size(); ++p) {
      std::set<std::pair<std::size_t, std::size_t>> writes;
      std::set<std::string> written;
      for (const KernelTask& t : phases[p].tasks) {
        if (!writes.insert({t.node, t.unit}).second) {
          issues.push_back(std::string(part) + " phase " + std::to_string(p) + ": unit " +
                           std::to_string(t.unit) + " of " + plan.graph.nodes[t.node].id +
                           " written twice");
        }
        written.insert(plan.graph.nodes[t.node].id);
      }
      for (const std::string& id : written) {
        for (const auto& in : plan.graph.find_node(id)->inputs) {
          if (written.count(in)) {
            issues.push_back(std::string(part) + " phase " + std::to_string(p) + ": " + id +
                             " reads " + in + " produced in the same phase");
          }
        }
      }
    }
  };
  check("preamble", plan.preamble);
  check("body", plan.body);
  return issues;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace {

struct NodeExec {
  const OpNode* node = nullptr;
  std::vector<PackedMatrix*> inputs;
  PackedMatrix* out = nullptr;
  std::vector<ElemInstr> program;  // elementwise kinds only
  bool flat = false;
  std::size_t tasks = 1;
};

void execute(NodeExec& x, std::size_t unit) {
  const OpNode& n = *x.node;
  auto& in = x.inputs;
  PackedMatrix& out = *x.out;
  if (!single_task(n.kind) && unit >= out.blocks().size()) return;  // empty output
  switch (n.kind) {
    case OpKind::MatMul:
    case OpKind::TransposeMatMulLeft:
    case OpKind::MatMulTransposeRight:
      return kernels::product_block(n.kind, *in[0], *in[1], out, unit);
    case OpKind::MultBiasSigm:
      return kernels::mult_bias_sigm_block(n.attrs.product, *in[0], *in[1], *in[2], out, unit);
    case OpKind::MaskedMatMul:
      return kernels::masked_matmul_block(*in[0], *in[1], out, unit);
    case OpKind::BiasAddRow:
      return kernels::bias_add_row_block(*in[0], *in[1], out, unit);
    case OpKind::Transpose:
      return kernels::transpose_block(*in[0], out, unit);
    case OpKind::SumRows:
      return kernels::sum_rows_block(*in[0], out, unit);
    case OpKind::SumAll:
      return kernels::sum_all(*in[0], out);
    case OpKind::SubSqSum:
      return kernels::sub_sq_sum(*in[0], *in[1], out);
    default: {
      const std::vector<const PackedMatrix*> ins(in.begin(), in.end());
      return kernels::elem_program_block(x.program, ins, out, unit, x.flat);
    }
  }
}

void fill_padding(PackedMatrix& m, double sentinel) {
  for (const StoredBlock& blk : m.blocks()) {
    if (!blk.masked) continue;
    const auto mask = m.mask(blk);
    auto vals = m.values(blk);
    const bool col = m.decision().layout == Layout::ColMajor;
    for (std::size_t r = 0; r < blk.rows; ++r)
      for (std::size_t c = 0; c < blk.cols; ++c)
        if (!mask[r * blk.cols + c]) vals[col ? c * blk.rows + r : r * blk.cols + c] = sentinel;
  }
}

void assign(PackedMatrix& dst, const SparsityPattern& pattern, const PackedMatrix& src) {
  if (dst.same_structure(src)) {
    std::copy(src.values().begin(), src.values().end(), dst.values().begin());
  } else {
    dst = PackedMatrix::pack(src.unpack(), pattern, dst.decision());
  }
}

}  // namespace

RunResult run(const Plan& plan, const ValueMap& initial, const RunOptions& options) {
  const ExecutionGraph& g = plan.graph;
  if (!g.convergence) throw ExecError("plan has no convergence loop");
  const std::size_t threads = options.threads.value_or(plan.threads());
  if (threads == 0) throw ExecError("thread count must be positive");

  const auto patterns = infer_patterns(g);
  std::map<std::string, std::unique_ptr<PackedMatrix>, std::less<>> values;
  for (const VarDecl& v : g.vars) {
    if (v.role == Role::Derived) continue;
    auto it = initial.find(v.id);
    if (it == initial.end()) throw ExecError("missing initial value for '" + v.id + "'");
    if (it->second.shape() != v.shape) {
      throw ExecError("initial value for '" + v.id + "' has shape " + it->second.shape().str() +
                      ", expected " + v.shape.str());
    }
    values[v.id] = std::make_unique<PackedMatrix>(
        PackedMatrix::pack(it->second, declared_pattern(v), plan.decision(v.id)));
  }
  for (const OpNode& n : g.nodes) {
    values[n.id] = std::make_unique<PackedMatrix>(n.out_shape, *patterns.at(n.id), plan.decision(n.id));
  }
  if (options.padding_sentinel) {
    for (auto& [id, m] : values) fill_padding(*m, *options.padding_sentinel);
  }

  std::vector<NodeExec> nodes(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    NodeExec& x = nodes[i];
    const OpNode& n = g.nodes[i];
    x.node = &n;
    x.out = values.at(n.id).get();
    for (const auto& in : n.inputs) x.inputs.push_back(values.at(in).get());
    if (n.kind == OpKind::ElemChain) {
      x.program = n.attrs.program;
    } else if (is_elementwise(n.kind)) {
      ElemInstr ins{n.kind, {}, n.attrs.theta};
      for (std::size_t a = 0; a < n.inputs.size(); ++a) ins.args.push_back({ElemOperand::Source::Input, a});
      x.program = {ins};
    }
    x.flat = std::all_of(x.inputs.begin(), x.inputs.end(), [&](const PackedMatrix* p) {
      return (p->shape().is_scalar() && !n.out_shape.is_scalar()) || p->same_structure(*x.out);
    });
  }
  auto tally = [&](const std::vector<Phase>& phases) {
    for (const Phase& ph : phases) {
      std::map<std::size_t, std::size_t> per_node;
      for (const KernelTask& t : ph.tasks) ++per_node[t.node];
      for (auto [node, count] : per_node) nodes[node].tasks = count;
    }
  };
  tally(plan.preamble);
  tally(plan.body);

  // Per phase, per worker task lists.
  using Schedule = std::vector<std::vector<std::vector<KernelTask>>>;
  auto distribute = [&](const std::vector<Phase>& phases) {
    Schedule s(phases.size(), std::vector<std::vector<KernelTask>>(threads));
    for (std::size_t p = 0; p < phases.size(); ++p)
      for (std::size_t k = 0; k < phases[p].tasks.size(); ++k) s[p][k % threads].push_back(phases[p].tasks[k]);
    return s;
  };
  const Schedule preamble = distribute(plan.preamble);
  const Schedule body = distribute(plan.body);

  std::vector<std::atomic<std::size_t>> done(g.nodes.size());
  WorkerPool pool(threads);
  auto run_phases = [&](const Schedule& schedule) {
    for (const auto& phase : schedule) {
      pool.run([&](std::size_t w) {
        for (const KernelTask& t : phase[w]) {
          execute(nodes[t.node], t.unit);
          done[t.node].fetch_add(1, std::memory_order_relaxed);
        }
      });
    }
  };

  // Updates swap buffers when the producer's value is needed nowhere else.
  struct Update {
    PackedMatrix* state;
    PackedMatrix* producer;
    const SparsityPattern* pattern;
    bool swap;
  };
  std::map<std::string, std::size_t> producer_uses;
  for (const auto& [s, p] : g.updates) ++producer_uses[p];
  const auto roots = root_values(g);
  std::vector<Update> updates;
  for (const auto& [s, p] : g.updates) {
    const bool visible = std::find(g.outputs.begin(), g.outputs.end(), p) != g.outputs.end() ||
                         p == g.convergence->cost;
    PackedMatrix* state = values.at(s).get();
    PackedMatrix* producer = values.at(p).get();
    const bool swap = !g.find_node(p)->preamble && producer_uses[p] == 1 && !visible &&
                      state->same_structure(*producer);
    updates.push_back({state, producer, &declared_pattern(*g.find_var(s)), swap});
  }

  RunResult result;
  run_phases(preamble);
  const PackedMatrix& cost = *values.at(g.convergence->cost);
  ConvergenceMonitor monitor(g.convergence->tol);
  const auto loop_start = std::chrono::steady_clock::now();
  for (std::size_t it = 1; it <= g.convergence->max_iters; ++it) {
    run_phases(body);
    const double c = cost.values()[0];
    if (!std::isfinite(c)) {
      throw ExecError("non-finite cost " + std::to_string(c) + " at iteration " + std::to_string(it));
    }
    for (Update& u : updates) {
      if (u.swap) {
        std::swap(*u.state, *u.producer);
      } else {
        assign(*u.state, *u.pattern, *u.producer);
      }
    }
    result.iterations = it;
    result.final_cost = c;
    result.costs.push_back(c);
    if (monitor.observe(c)) {
      result.stop_reason = StopReason::Converged;
      break;
    }
  }
  result.loop_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - loop_start).count();

  for (const auto& out : g.outputs) result.outputs[out] = values.at(out)->unpack();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    result.node_runs[g.nodes[i].id] = done[i].load() / nodes[i].tasks;
  }
  if (options.keep_packed) {
    for (const VarDecl& v : g.vars)
      if (v.role != Role::Derived) result.packed.emplace(v.id, *values.at(v.id));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reference evaluator
// ---------------------------------------------------------------------------

namespace {

double ref_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double ref_elementwise(OpKind op, double a, double b, double theta) {
  switch (op) {
    case OpKind::Add:
      return a + b;
    case OpKind::Sub:
      return a - b;
    case OpKind::MulElem:
    case OpKind::ScaleByScalar:
      return a * b;
    case OpKind::Square:
      return a * a;
    case OpKind::Abs:
      return std::fabs(a);
    case OpKind::Sigmoid:
      return ref_sigmoid(a);
    case OpKind::SoftShrink: {
      const double mag = std::fabs(a) - theta;
      return mag > 0 ? (a < 0 ? -mag : mag) : 0.0;
    }
    default:
      throw ExecError("not an elementwise op: " + std::string(to_string(op)));
  }
}

/// Applies a unary or binary op with 1x1 broadcasting.
Matrix ref_map(OpKind op, const Matrix& a, const Matrix* b, double theta) {
  Shape s = a.shape();
  if (b && a.shape().is_scalar()) s = b->shape();
  Matrix out(s);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) {
      const double x = a.shape().is_scalar() ? a(0, 0) : a(r, c);
      const double y = !b ? 0.0 : (b->shape().is_scalar() ? (*b)(0, 0) : (*b)(r, c));
      out(r, c) = ref_elementwise(op, x, y, theta);
    }
  return out;
}

Matrix ref_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

Matrix ref_product(OpKind kind, const Matrix& a0, const Matrix& b0) {
  const Matrix a = kind == OpKind::TransposeMatMulLeft ? ref_transpose(a0) : a0;
  const Matrix b = kind == OpKind::MatMulTransposeRight ? ref_transpose(b0) : b0;
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

Matrix ref_bias(const Matrix& x, const Matrix& bias) {
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) += bias(0, c);
  return out;
}

Matrix ref_mask(Matrix m, const SparsityPattern& p) {
  if (p.is_dense()) return m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (!p.contains(r, c)) m(r, c) = 0.0;
  return m;
}

double ref_total(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v;
  return s;
}

Matrix ref_eval(const ExecutionGraph& g, const OpNode& n, const std::vector<const Matrix*>& in) {
  switch (n.kind) {
    case OpKind::MatMul:
    case OpKind::TransposeMatMulLeft:
    case OpKind::MatMulTransposeRight:
      return ref_product(n.kind, *in[0], *in[1]);
    case OpKind::Transpose:
      return ref_transpose(*in[0]);
    case OpKind::BiasAddRow:
      return ref_bias(*in[0], *in[1]);
    case OpKind::SumRows: {
      Matrix out(1, in[0]->cols());
      for (std::size_t r = 0; r < in[0]->rows(); ++r)
        for (std::size_t c = 0; c < in[0]->cols(); ++c) out(0, c) += (*in[0])(r, c);
      return out;
    }
    case OpKind::SumAll:
      return Matrix(1, 1, ref_total(*in[0]));
    case OpKind::MaskedMatMul: {
      const VarDecl* p = g.find_var(n.attrs.pattern_of);
      return ref_mask(ref_product(OpKind::TransposeMatMulLeft, *in[0], *in[1]), declared_pattern(*p));
    }
    case OpKind::MultBiasSigm:
      return ref_map(OpKind::Sigmoid, ref_bias(ref_product(n.attrs.product, *in[0], *in[1]), *in[2]),
                     nullptr, 0.0);
    case OpKind::SubSqSum:
      return Matrix(1, 1, ref_total(ref_map(OpKind::Square, ref_map(OpKind::Sub, *in[0], in[1], 0), nullptr, 0)));
    case OpKind::ElemChain: {
      std::vector<Matrix> temps;
      for (const ElemInstr& ins : n.attrs.program) {
        std::vector<const Matrix*> args;
        for (const ElemOperand& a : ins.args)
          args.push_back(a.source == ElemOperand::Source::Input ? in[a.index] : &temps[a.index]);
        temps.push_back(ref_map(ins.op, *args[0], args.size() > 1 ? args[1] : nullptr, ins.theta));
      }
      return temps.back();
    }
    default:
      return ref_map(n.kind, *in[0], in.size() > 1 ? in[1] : nullptr, n.attrs.theta);
  }
}

}  // namespace

RunResult run_reference(const ExecutionGraph& g, const ValueMap& initial) {
  if (auto diags = validate(g); !diags.empty()) {
    throw ExecError("invalid graph: " + diags.front().id + ": " + diags.front().message);
  }
  ValueMap vals;
  for (const VarDecl& v : g.vars) {
    if (v.role == Role::Derived) continue;
    auto it = initial.find(v.id);
    if (it == initial.end()) throw ExecError("missing initial value for '" + v.id + "'");
    if (it->second.shape() != v.shape) throw ExecError("initial value for '" + v.id + "' has wrong shape");
    vals[v.id] = ref_mask(it->second, declared_pattern(v));
  }
  RunResult result;
  for (const OpNode& n : g.nodes) result.node_runs[n.id] = 0;
  auto eval = [&](bool preamble) {
    for (const OpNode& n : g.nodes) {
      if (n.preamble != preamble) continue;
      std::vector<const Matrix*> in;
      for (const auto& id : n.inputs) in.push_back(&vals.at(id));
      vals[n.id] = ref_eval(g, n, in);
      ++result.node_runs[n.id];
    }
  };
  eval(true);
  ConvergenceMonitor monitor(g.convergence->tol);
  for (std::size_t it = 1; it <= g.convergence->max_iters; ++it) {
    eval(false);
    const double c = vals.at(g.convergence->cost)(0, 0);
    if (!std::isfinite(c)) {
      throw ExecError("non-finite cost " + std::to_string(c) + " at iteration " + std::to_string(it));
    }
    std::map<std::string, Matrix> next;
    for (const auto& [s, p] : g.updates) next[s] = vals.at(p);
    for (auto& [s, m] : next) vals[s] = std::move(m);
    result.iterations = it;
    result.final_cost = c;
    result.costs.push_back(c);
    if (monitor.observe(c)) {
      result.stop_reason = StopReason::Converged;
      break;
    }
  }
  for (const auto& out : g.outputs) result.outputs[out] = vals.at(out);
  return result;
}

}  // namespace nnc
