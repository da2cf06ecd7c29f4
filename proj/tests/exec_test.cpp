// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/exec.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <set>

#include "nnc/compiler.hpp"
#include "nnc/models.hpp"
#include "nnc/passes.hpp"
#include "support/generators.hpp"
#include "support/random_graph.hpp"
#include "support/tables.hpp"

namespace nnc {
namespace {

Plan plan_for(const ExecutionGraph& graph, std::size_t block, std::size_t threads,
              const PipelineOptions& options = {}) {
  ExecutionGraph optimized = run_pipeline(graph, options).graph;
  auto decisions = plan_storage(optimized, block);
  Selection s;
  s.block = block;
  s.threads = threads;
  return lower(std::move(optimized), std::move(decisions), s);
}

void expect_same_outputs(const RunResult& got, const RunResult& want, double tol, const std::string& label) {
  ASSERT_EQ(got.outputs.size(), want.outputs.size()) << label;
  for (const auto& [id, m] : want.outputs) {
    EXPECT_LE(relative_difference(got.outputs.at(id), m), tol) << label << " output " << id;
  }
  ASSERT_EQ(got.costs.size(), want.costs.size()) << label;
  EXPECT_EQ(got.iterations, want.iterations) << label;
}

/// Phase index of every task of `node` in `phases`.
std::set<std::size_t> phases_of(const std::vector<Phase>& phases, std::size_t node) {
  std::set<std::size_t> out;
  for (std::size_t p = 0; p < phases.size(); ++p)
    for (const KernelTask& t : phases[p].tasks)
      if (t.node == node) out.insert(p);
  return out;
}

std::size_t node_index(const Plan& plan, const std::string& id) {
  for (std::size_t i = 0; i < plan.graph.nodes.size(); ++i)
    if (plan.graph.nodes[i].id == id) return i;
  throw std::out_of_range(id);
}

// --- oracle equivalence ------------------------------------------------------------

class RandomEquivalence : public ::testing::TestWithParam<testing::WeightSparsity> {};

TEST_P(RandomEquivalence, PlanMatchesReferenceForEveryBlockAndThreadCount) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto c = testing::random_case(1000 + seed, GetParam());
    const RunResult want = run_reference(c.graph, c.initial);
    for (std::size_t b : {3, 8, 64}) {
      for (std::size_t t : {1, 2, 4}) {
        const RunResult got = run(plan_for(c.graph, b, t), c.initial);
        expect_same_outputs(got, want, 1e-10,
                            c.label + " b=" + std::to_string(b) + " t=" + std::to_string(t));
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllSparsities, RandomEquivalence, ::testing::ValuesIn(testing::kAllSparsities),
                         [](const auto& info) { return std::string(testing::name_of(info.param)); });

TEST(ModelEquivalence, ReferenceModelsAcrossFormats) {
  const ModelSizes s{9, 20, 12};
  for (SparsityKind kind : {SparsityKind::Dense, SparsityKind::Lrf, SparsityKind::Unstructured}) {
    const SparsityPattern p = make_pattern(kind, {20, 12}, 5, 0.3, 2);
    const std::vector<Model> models{build_backprop({s, p, 0.05, {1e-300, 5}}),
                                    build_ista({s, p, 4.0, 0.05, {1e-300, 5}}),
                                    build_rbm({s, p, 0.05, {1e-300, 5}}), build_ae({s, p, 0.05, {1e-300, 5}})};
    for (const Model& m : models) {
      const ValueMap init = random_values(m.graph, 17, m.fixed);
      const RunResult want = run_reference(m.graph, init);
      for (std::size_t b : {4, 7, 16}) {
        expect_same_outputs(run(plan_for(m.graph, b, 2), init), want, 1e-10,
                            std::string(to_string(kind)) + " b=" + std::to_string(b));
      }
    }
  }
}

TEST(ThreadOverride, RunOptionThreadsKeepResultsBitwise) {
  const Model m = build_backprop({{16, 24, 12}, {}, 0.05, {1e-300, 4}});
  const ValueMap init = random_values(m.graph, 3, m.fixed);
  const Plan plan = plan_for(m.graph, 8, 4);
  const RunResult base = run(plan, init);
  for (std::size_t t : {1, 2, 3, 7}) {
    RunOptions o;
    o.threads = t;
    const RunResult r = run(plan, init, o);
    EXPECT_EQ(r.outputs, base.outputs) << "t=" << t;
    EXPECT_EQ(r.costs, base.costs) << "t=" << t;
  }
}

// --- scheduling ------------------------------------------------------------------

TEST(PhaseSafety, HoldsForModelsAndRandomGraphs) {
  const ModelSizes s{12, 20, 16};
  const SparsityPattern p = lrf_pattern({20, 16}, 4);
  for (const Model& m : {build_backprop({s, p, 0.01, {}}), build_ista({s, {}, 2.0, 0.1, {}}),
                         build_rbm({s, p, 0.01, {}}), build_ae({s, {}, 0.01, {}})}) {
    for (std::size_t b : {3, 8}) EXPECT_TRUE(check_phase_safety(plan_for(m.graph, b, 3)).empty());
  }
  for (auto sp : testing::kAllSparsities) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto c = testing::random_case(seed, sp);
      const auto issues = check_phase_safety(plan_for(c.graph, 4, 2));
      EXPECT_TRUE(issues.empty()) << c.label << ": " << (issues.empty() ? "" : issues.front());
    }
  }
}

ExecutionGraph two_products() {
  GraphBuilder b;
  b.declare_var("X", VarKind::DenseMatrix, {8, 8}, Role::Constant);
  b.declare_var("S", VarKind::DenseMatrix, {8, 8}, Role::State);
  b.matmul("X", "S", "left");
  b.matmul("S", "X", "right");
  b.binary(OpKind::MatMul, "left", "right", "both");
  b.unary(OpKind::Sigmoid, "both", "next");
  b.bind_update("S", "next");
  b.unary(OpKind::SumAll, "next", "cost");
  b.add_output("S");
  b.until_converged("cost", 1e-300, 3);
  return std::move(b).finish();
}

TEST(Phases, IndependentProductsShareAPhaseAndDependentOnesDoNot) {
  const Plan plan = lower(two_products(), plan_storage(two_products(), 4), {4, 2});
  const auto left = phases_of(plan.body, node_index(plan, "left"));
  const auto right = phases_of(plan.body, node_index(plan, "right"));
  const auto both = phases_of(plan.body, node_index(plan, "both"));
  ASSERT_EQ(left.size(), 1u);
  EXPECT_EQ(left, right);
  ASSERT_EQ(both.size(), 1u);
  EXPECT_GT(*both.begin(), *left.begin());
  // Each unit of an 8x8 output at b=4 is its own task.
  std::size_t tasks = 0;
  for (const KernelTask& t : plan.body[*left.begin()].tasks) tasks += t.node == node_index(plan, "left");
  EXPECT_EQ(tasks, 4u);
}

TEST(Phases, WorkersAreRoundRobinWithinAPhase) {
  const Plan plan = lower(two_products(), plan_storage(two_products(), 4), {4, 3});
  for (const Phase& ph : plan.body)
    for (std::size_t i = 0; i < ph.tasks.size(); ++i) EXPECT_EQ(ph.tasks[i].worker, i % 3);
}

TEST(Phases, DescribeNamesEveryPhase) {
  const Plan plan = lower(two_products(), plan_storage(two_products(), 4), {4, 1});
  const auto lines = plan.describe();
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines.front().rfind("phase body 0: ", 0), 0u) << lines.front();
}

// --- lowering errors -----------------------------------------------------------------

TEST(Lower, RejectsInconsistentInputs) {
  const ExecutionGraph g = two_products();
  EXPECT_THROW(lower(g, plan_storage(g, 4), {4, 0}), ExecError);
  EXPECT_THROW(lower(g, plan_storage(g, 8), {4, 1}), ExecError) << "block disagrees with the selection";
  auto missing = plan_storage(g, 4);
  missing.erase(std::remove_if(missing.begin(), missing.end(), [](const auto& d) { return d.var == "S"; }),
                missing.end());
  EXPECT_THROW(lower(g, missing, {4, 1}), ExecError);
  EXPECT_THROW(lower(g, plan_storage(g, 4), {4, 1}).decision("nope"), ExecError);
}

// --- loop semantics ----------------------------------------------------------------

TEST(Updates, AreSimultaneous) {
  // S <- P and P <- S swap the two states every iteration.
  GraphBuilder b;
  b.declare_var("zero", VarKind::DenseMatrix, {3, 5}, Role::Constant);
  b.declare_var("S", VarKind::DenseMatrix, {3, 5}, Role::State);
  b.declare_var("P", VarKind::DenseMatrix, {3, 5}, Role::State);
  b.binary(OpKind::Add, "P", "zero", "s_next");
  b.binary(OpKind::Add, "S", "zero", "p_next");
  b.bind_update("S", "s_next");
  b.bind_update("P", "p_next");
  b.unary(OpKind::SumAll, b.binary(OpKind::MulElem, "S", "S"), "cost");
  b.add_output("S");
  b.add_output("P");
  b.until_converged("cost", 1e-300, 3);
  const ExecutionGraph g = std::move(b).finish();
  ValueMap init{{"zero", Matrix(3, 5)}, {"S", Matrix(3, 5, 1.0)}, {"P", Matrix(3, 5, 2.0)}};
  for (std::size_t t : {1, 2}) {
    const RunResult r = run(plan_for(g, 2, t), init);
    ASSERT_EQ(r.iterations, 3u);
    EXPECT_EQ(r.outputs.at("S"), Matrix(3, 5, 2.0));
    EXPECT_EQ(r.outputs.at("P"), Matrix(3, 5, 1.0));
    EXPECT_EQ(r.costs, (std::vector<double>{15.0, 60.0, 15.0}));
  }
  EXPECT_EQ(run_reference(g, init).outputs.at("S"), Matrix(3, 5, 2.0));
}

/// S <- f * S with cost sum(S^2).
ExecutionGraph scaled_state(std::size_t max_iters) {
  GraphBuilder b;
  b.declare_var("f", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("S", VarKind::DenseMatrix, {2, 2}, Role::State);
  b.bind_update("S", b.binary(OpKind::ScaleByScalar, "f", "S"));
  b.unary(OpKind::SumAll, b.unary(OpKind::Square, "S"), "cost");
  b.add_output("S");
  b.until_converged("cost", 1e-6, max_iters);
  return std::move(b).finish();
}

TEST(Convergence, ConstantCostStopsAtTheSecondObservation) {
  const ExecutionGraph g = scaled_state(50);
  const ValueMap init{{"f", Matrix(1, 1, 1.0)}, {"S", Matrix(2, 2, 0.5)}};
  const RunResult r = run(plan_for(g, 2, 1), init);
  EXPECT_EQ(r.iterations, 2u);
  EXPECT_EQ(r.stop_reason, StopReason::Converged);
  EXPECT_EQ(r.costs, (std::vector<double>{1.0, 1.0}));
  const RunResult ref = run_reference(g, init);
  EXPECT_EQ(ref.iterations, 2u);
}

TEST(Convergence, ChangingCostRunsToTheIterationCap) {
  const ExecutionGraph g = scaled_state(12);
  const RunResult r = run(plan_for(g, 2, 1), {{"f", Matrix(1, 1, 0.9)}, {"S", Matrix(2, 2, 1.0)}});
  EXPECT_EQ(r.iterations, 12u);
  EXPECT_EQ(r.stop_reason, StopReason::MaxIters);
  EXPECT_EQ(to_string(r.stop_reason), "max_iters");
  EXPECT_EQ(to_string(StopReason::Converged), "converged");
}

TEST(Convergence, NonFiniteCostNamesTheIteration) {
  const ExecutionGraph g = scaled_state(10);
  const ValueMap init{{"f", Matrix(1, 1, 1e200)}, {"S", Matrix(2, 2, 1.0)}};
  try {
    run(plan_for(g, 2, 1), init);
    FAIL() << "expected ExecError";
  } catch (const ExecError& e) {
    EXPECT_NE(std::string(e.what()).find("at iteration 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_reference(g, init), ExecError);
}

TEST(Convergence, IstaWithTinyToleranceRunsEveryIteration) {
  const Model m = build_ista({{8, 10, 12}, {}, 40.0, 0.05, {1e-300, 25}});
  const RunResult r = run(plan_for(m.graph, 4, 2), random_values(m.graph, 5, m.fixed));
  EXPECT_EQ(r.iterations, 25u);
  EXPECT_EQ(r.costs.size(), 25u);
}

TEST(Convergence, BackpropAtItsFixedPointConverges) {
  const Model m = build_backprop({{6, 10, 4}, {}, 0.5, {1e-9, 100}});
  ValueMap init = random_values(m.graph, 2, m.fixed);
  // Targets equal to the forward pass: the cost is 0 and nothing moves.
  Matrix fwd(6, 4);
  const Matrix& V = init.at("V");
  const Matrix& W = init.at("W");
  const Matrix& bias = init.at("bias");
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double z = bias(0, j);
      for (std::size_t k = 0; k < 10; ++k) z += V(i, k) * W(k, j);
      fwd(i, j) = 1.0 / (1.0 + std::exp(-z));
    }
  init["T"] = fwd;
  const RunResult r = run(plan_for(m.graph, 4, 2), init);
  EXPECT_EQ(r.stop_reason, StopReason::Converged);
  EXPECT_EQ(r.iterations, 2u);
  EXPECT_LE(relative_difference(r.outputs.at("W"), W), 1e-15);
}

// --- hoisting ---------------------------------------------------------------------

TEST(Preamble, RunsOnceWhileTheBodyRunsEveryIteration) {
  const Model m = build_ista({{8, 10, 12}, {}, 40.0, 0.05, {1e-300, 30}});
  const Plan plan = plan_for(m.graph, 4, 2);
  const RunResult r = run(plan, random_values(m.graph, 1, m.fixed));
  std::size_t preamble_nodes = 0;
  for (const OpNode& n : plan.graph.nodes) {
    if (n.preamble) {
      ++preamble_nodes;
      EXPECT_EQ(r.node_runs.at(n.id), 1u) << n.id;
    } else {
      EXPECT_EQ(r.node_runs.at(n.id), r.iterations) << n.id;
    }
  }
  EXPECT_EQ(preamble_nodes, 2u);
  EXPECT_FALSE(plan.preamble.empty());
}

// --- storage ----------------------------------------------------------------------

TEST(Padding, SentinelSurvivesInMaskedTiles) {
  // 60% fill selects the hybrid format, whose dense tiles carry padding.
  const SparsityPattern p = unstructured_pattern({24, 16}, 0.6, 3);
  const Model m = build_backprop({{10, 24, 16}, p, 0.05, {1e-300, 20}});
  const ValueMap init = random_values(m.graph, 4, m.fixed);
  const Plan plan = plan_for(m.graph, 8, 2);
  ASSERT_EQ(plan.decision("W").format, Format::HybridCSB);
  RunOptions o;
  o.padding_sentinel = 12345.0;
  o.keep_packed = true;
  const RunResult r = run(plan, init, o);
  expect_same_outputs(r, run_reference(m.graph, init), 1e-10, "sentinel");
  const PackedMatrix& w = r.packed.at("W");
  std::size_t padding = 0;
  for (const StoredBlock& blk : w.blocks()) {
    if (!blk.masked) continue;
    const auto mask = w.mask(blk);
    const auto vals = w.values(blk);
    for (std::size_t rr = 0; rr < blk.rows; ++rr)
      for (std::size_t cc = 0; cc < blk.cols; ++cc) {
        if (mask[rr * blk.cols + cc]) continue;
        ++padding;
        const std::size_t off = w.layout() == Layout::RowMajor ? rr * blk.cols + cc : cc * blk.rows + rr;
        EXPECT_EQ(vals[off], 12345.0);
      }
  }
  EXPECT_GT(padding, 0u);
  auto stored = w.stored_positions();
  auto declared = p.positions({24, 16});
  std::sort(stored.begin(), stored.end());
  std::sort(declared.begin(), declared.end());
  EXPECT_EQ(stored, declared);
}

// --- inputs ---------------------------------------------------------------------

TEST(Inputs, MissingOrMisshapenValuesThrow) {
  const Model m = build_backprop({{4, 6, 3}, {}, 0.05, {}});
  const Plan plan = plan_for(m.graph, 4, 1);
  ValueMap init = random_values(m.graph, 1, m.fixed);
  ValueMap missing = init;
  missing.erase("V");
  EXPECT_THROW(run(plan, missing), ExecError);
  EXPECT_THROW(run_reference(m.graph, missing), ExecError);
  init["W"] = Matrix(3, 6);
  EXPECT_THROW(run(plan, init), ExecError);
  EXPECT_THROW(run_reference(m.graph, init), ExecError);
}

TEST(Inputs, OffPatternInitialValuesAreDropped) {
  const SparsityPattern p = lrf_pattern({8, 8}, 4);
  const Model m = build_backprop({{4, 8, 8}, p, 0.05, {1e-300, 2}});
  ValueMap init = random_values(m.graph, 1, m.fixed);
  ValueMap noisy = init;
  noisy["W"] = Matrix(8, 8, 0.25);
  ValueMap clean = init;
  clean["W"] = testing::masked(Matrix(8, 8, 0.25), p);
  const Plan plan = plan_for(m.graph, 4, 1);
  EXPECT_EQ(run(plan, noisy).outputs, run(plan, clean).outputs);
  EXPECT_EQ(run_reference(m.graph, noisy).outputs, run_reference(m.graph, clean).outputs);
}

// --- compile ----------------------------------------------------------------------

TEST(Compile, SelectsFromTheTableAndHonoursForcedValues) {
  const TuneTable table = testing::synthetic_table();
  const Model m = build_backprop({{32, 64, 16}, {}, 0.05, {}});
  const Compiled c = compile(m.graph, table);
  EXPECT_FALSE(c.plan.selection.forced);
  EXPECT_GT(c.plan.selection.predicted_seconds, 0.0);
  for (const StorageDecision& d : c.plan.decisions) EXPECT_EQ(d.block, c.plan.selection.block);

  CompileOptions forced;
  forced.force_block = 16;
  forced.force_threads = 2;
  const Compiled f = compile(m.graph, table, forced);
  EXPECT_TRUE(f.plan.selection.forced);
  EXPECT_EQ(f.plan.selection.block, 16u);
  EXPECT_EQ(f.plan.threads(), 2u);
  double sum = 0.0;
  for (const TuneQuery& q : tune_queries(f.plan.graph)) sum += q.weight * estimate_time(table, q.m, q.k, q.n, 16, 2).seconds;
  EXPECT_DOUBLE_EQ(f.plan.selection.predicted_seconds, sum);
}

TEST(Compile, PreambleProductsArePricedPerIteration) {
  const Model m = build_ista({{16, 32, 8}, {}, 10.0, 0.1, {1e-6, 50}});
  const auto queries = tune_queries(run_pipeline(m.graph).graph);
  std::size_t preamble = 0;
  for (const TuneQuery& q : queries) {
    if (q.weight != 1.0) {
      EXPECT_DOUBLE_EQ(q.weight, 1.0 / 50.0) << q.label;
      ++preamble;
    }
  }
  EXPECT_EQ(preamble, 2u);
}

TEST(Compile, ProductFreeGraphsUseTheBlockNearest64OnOneThread) {
  const ExecutionGraph g = scaled_state(3);
  const Compiled c = compile(g, testing::synthetic_table({8, 16}, {4, 32, 128}, {1, 2}));
  EXPECT_EQ(c.plan.selection.block, 32u);
  EXPECT_EQ(c.plan.threads(), 1u);
}

TEST(Compile, DumpPlanListsReportsStorageSelectionAndPhases) {
  const Model m = build_backprop({{16, 32, 8}, {}, 0.05, {}});
  const auto lines = dump_plan(compile(m.graph, testing::synthetic_table()));
  auto has_prefix = [&](const std::string& p) {
    return std::any_of(lines.begin(), lines.end(), [&](const auto& l) { return l.rfind(p, 0) == 0; });
  };
  EXPECT_TRUE(has_prefix("fuse MultBiasSigm"));
  EXPECT_TRUE(has_prefix("storage var=W"));
  EXPECT_TRUE(has_prefix("selection b="));
  EXPECT_TRUE(has_prefix("phase body 0:"));
}

TEST(Compile, RejectsInvalidTables) {
  TuneTable bad = testing::synthetic_table();
  bad.b_axis = {3};
  const Model m = build_backprop({{4, 4, 4}, {}, 0.05, {}});
  EXPECT_THROW(compile(m.graph, bad), TuneError);
}

}  // namespace
}  // namespace nnc
