// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/bench.hpp"

#include <array>
#include <charconv>
#include <numeric>
#include <sstream>

#include "nnc/compiler.hpp"
#include "nnc/exec.hpp"

namespace nnc {

namespace {

constexpr std::array<std::pair<Algorithm, std::string_view>, 4> kAlgorithmNames{{
    {Algorithm::Backprop, "backprop"},
    {Algorithm::Rbm, "rbm"},
    {Algorithm::Ae, "ae"},
    {Algorithm::Ista, "ista"},
}};

// Positive, and small enough that only an exactly repeated cost stops early.
constexpr double kBenchTol = 1e-300;

std::string shortest(double x) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), end);
}

}  // namespace

std::string_view to_string(Algorithm algo) {
  for (const auto& [a, name] : kAlgorithmNames)
    if (a == algo) return name;
  return "?";
}

std::optional<Algorithm> parse_algorithm(std::string_view name) {
  for (const auto& [a, n] : kAlgorithmNames)
    if (n == name) return a;
  return std::nullopt;
}

double reported_time(std::span<const double> run_seconds) {
  if (run_seconds.empty()) return 0.0;
  const std::size_t n = std::min(kReportedRuns, run_seconds.size());
  const auto tail = run_seconds.last(n);
  return std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(n);
}

BenchModel build_bench_model(const BenchConfig& c) {
  if (c.iters == 0) throw GraphError("bench: iters must be positive");
  const Shape weight_shape{c.sizes.visible, c.sizes.hidden};
  const SparsityPattern pattern = make_pattern(c.sparsity, weight_shape, c.field, c.fill, c.seed);
  const LoopControl loop{kBenchTol, c.iters};
  Model model;
  switch (c.algo) {
    case Algorithm::Backprop:
      model = build_backprop({c.sizes, pattern, 0.01, loop});
      break;
    case Algorithm::Rbm:
      model = build_rbm({c.sizes, pattern, 0.01, loop});
      break;
    case Algorithm::Ae:
      model = build_ae({c.sizes, pattern, 0.01, loop});
      break;
    case Algorithm::Ista: {
      // The step constant depends on the dictionary, whose seeded values do
      // not depend on the other hyperparameters.
      const Model probe = build_ista({c.sizes, pattern, 1.0, 0.1, loop});
      const Matrix dictionary = random_values(probe.graph, c.seed).at("W");
      model = build_ista({c.sizes, pattern, ista_lipschitz(dictionary), 0.1, loop});
      break;
    }
  }
  ValueMap initial = random_values(model.graph, c.seed, model.fixed);
  return {std::move(model), std::move(initial)};
}

BenchReport run_bench(const BenchConfig& config, const TuneTable& table) {
  if (config.runs == 0) throw GraphError("bench: runs must be positive");
  const BenchModel bench = build_bench_model(config);
  CompileOptions options;
  options.pipeline.fuse = config.fusion;
  options.pipeline.hoist = config.hoist;
  options.force_block = config.force_block;
  options.force_threads = config.force_threads;
  const Compiled compiled = compile(bench.model.graph, table, options);

  BenchReport report;
  report.config = config;
  report.block = compiled.plan.selection.block;
  report.threads = compiled.plan.selection.threads;
  for (const VarDecl& v : compiled.plan.graph.vars) {
    if (v.role == Role::Derived || v.kind == VarKind::Scalar) continue;
    report.formats.push_back(v.id + "=" + std::string(to_string(compiled.plan.decision(v.id).format)));
  }
  for (std::size_t r = 0; r < config.runs; ++r) {
    RunResult result = run(compiled.plan, bench.initial);
    report.run_seconds.push_back(result.loop_seconds);
    if (r + 1 == config.runs) {
      report.iterations = result.iterations;
      report.final_cost = result.final_cost;
      report.outputs = std::move(result.outputs);
    }
  }
  report.reported_seconds = reported_time(report.run_seconds);
  return report;
}

std::vector<BenchReport> run_sweep(BenchConfig config, const TuneTable& table,
                                   const std::vector<std::size_t>& blocks,
                                   const std::vector<std::size_t>& threads) {
  std::vector<BenchReport> reports;
  for (std::size_t b : blocks) {
    for (std::size_t t : threads) {
      config.force_block = b;
      config.force_threads = t;
      reports.push_back(run_bench(config, table));
    }
  }
  return reports;
}

std::string csv_header() {
  return "row,algo,sparsity,rows,cols,hidden,field,fill,runs,iters,fusion,hoist,b,t,forced,formats,"
         "run,seconds,final_cost";
}

std::vector<std::string> csv_rows(const BenchReport& r) {
  const BenchConfig& c = r.config;
  std::ostringstream prefix;
  std::string formats;
  for (const auto& f : r.formats) formats += (formats.empty() ? "" : ";") + f;
  prefix << to_string(c.algo) << "," << to_string(c.sparsity) << "," << c.sizes.batch << "," << c.sizes.visible
         << "," << c.sizes.hidden << "," << c.field << "," << shortest(c.fill) << "," << c.runs << ","
         << c.iters << "," << (c.fusion ? 1 : 0) << "," << (c.hoist ? 1 : 0) << "," << r.block << ","
         << r.threads << "," << ((c.force_block || c.force_threads) ? 1 : 0) << "," << formats;
  std::vector<std::string> rows;
  for (std::size_t i = 0; i < r.run_seconds.size(); ++i) {
    rows.push_back("run," + prefix.str() + "," + std::to_string(i + 1) + "," +
                   shortest(r.run_seconds[i]) + ",");
  }
  rows.push_back("summary," + prefix.str() + ",," + shortest(r.reported_seconds) + "," +
                 shortest(r.final_cost));
  return rows;
}

}  // namespace nnc
