// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/cli.hpp"

#include <algorithm>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nnc/autotune.hpp"
#include "nnc/bench.hpp"
#include "nnc/compiler.hpp"
#include "nnc/graph_json.hpp"
#include "nnc/models.hpp"

namespace nnc {

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitTable = 2;

/// A failure with a fixed exit code.
struct CliFailure {
  int code;
  std::string message;
};

TuneTable table_or_fail(const std::string& path) {
  try {
    return load_table(path);
  } catch (const Error& e) {
    throw CliFailure{kExitTable, e.what()};
  }
}

GraphDocument graph_or_fail(const std::string& path) {
  try {
    return load_graph_json(path);
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
}

/// Compile errors caused by the table exit 2, the rest 1.
Compiled compile_or_fail(const ExecutionGraph& graph, const TuneTable& table, const CompileOptions& options) {
  try {
    return compile(graph, table, options);
  } catch (const TuneError& e) {
    throw CliFailure{kExitTable, e.what()};
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
}

std::size_t default_threads() {
  std::size_t t = 1;
  while (t * 2 <= std::max(1u, std::thread::hardware_concurrency())) t *= 2;
  return t;
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct CalibrateArgs {
  CalibrationConfig config;
  std::string out;
};

struct PlanArgs {
  std::string graph, table;
};

struct RunArgs {
  std::string graph, table;
  std::optional<std::size_t> threads;
  std::uint64_t seed = 1;
};

struct BenchArgs {
  std::string algo = "backprop", sparsity = "dense", table, out;
  BenchConfig config;
  bool no_fusion = false, no_hoist = false;
  std::vector<std::size_t> force_b, force_t;
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  CalibrationReport report;
  try {
    report = calibrate(a.config);
  } catch (const TuneError& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
  save_table(report.table, a.out);
  nlohmann::json doc = {{"out", a.out},
                        {"entries", report.table.seconds.size()},
                        {"skipped", report.skipped.size()},
                        {"l1_bytes", report.table.meta.l1_bytes},
                        {"l2_bytes", report.table.meta.l2_bytes}};
  out << doc.dump() << "\n";
  return 0;
}

int cmd_plan(const PlanArgs& a, std::ostream& out) {
  const GraphDocument doc = graph_or_fail(a.graph);
  const TuneTable table = table_or_fail(a.table);
  const Compiled compiled = compile_or_fail(doc.graph, table, {});
  for (const std::string& line : dump_plan(compiled)) out << line << "\n";
  return 0;
}

int cmd_run(const RunArgs& a, bool verbose, std::ostream& out, std::ostream& err) {
  const GraphDocument doc = graph_or_fail(a.graph);
  const TuneTable table = table_or_fail(a.table);
  const Compiled compiled = compile_or_fail(doc.graph, table, {});
  if (verbose) {
    for (const std::string& line : dump_plan(compiled)) err << line << "\n";
  }
  RunOptions options;
  if (a.threads) {
    // Clamped to the calibrated range.
    const std::size_t cap = table.t_axis.empty() ? 1 : table.t_axis.back();
    options.threads = std::clamp<std::size_t>(*a.threads, 1, cap);
  }
  const ValueMap initial = random_values(doc.graph, a.seed, doc.init);
  RunResult result;
  try {
    result = run(compiled.plan, initial, options);
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& [id, m] : result.outputs) outputs[id] = matrix_json(m);
  nlohmann::json json = {{"iterations", result.iterations},
                         {"final_cost", result.final_cost},
                         {"stop_reason", std::string(to_string(result.stop_reason))},
                         {"costs", result.costs},
                         {"block", compiled.plan.selection.block},
                         {"threads", options.threads.value_or(compiled.plan.threads())},
                         {"outputs", outputs}};
  out << json.dump() << "\n";
  return 0;
}

int cmd_bench(BenchArgs a, std::ostream& out) {
  const auto algo = parse_algorithm(a.algo);
  const auto sparsity = parse_sparsity_kind(a.sparsity);
  if (!algo) throw CliFailure{kExitUsage, "--algo: unknown algorithm '" + a.algo + "'"};
  if (!sparsity) throw CliFailure{kExitUsage, "--sparsity: unknown sparsity '" + a.sparsity + "'"};
  a.config.algo = *algo;
  a.config.sparsity = *sparsity;
  a.config.fusion = !a.no_fusion;
  a.config.hoist = !a.no_hoist;
  const TuneTable table = table_or_fail(a.table);

  std::vector<BenchReport> reports;
  try {
    if (a.force_b.size() > 1 || a.force_t.size() > 1) {
      if (a.force_b.empty() || a.force_t.empty()) {
        throw CliFailure{kExitUsage, "a sweep needs both --force-b and --force-t"};
      }
      reports = run_sweep(a.config, table, a.force_b, a.force_t);
    } else {
      if (!a.force_b.empty()) a.config.force_block = a.force_b.front();
      if (!a.force_t.empty()) a.config.force_threads = a.force_t.front();
      reports.push_back(run_bench(a.config, table));
    }
  } catch (const TuneError& e) {
    throw CliFailure{kExitTable, e.what()};
  } catch (const Error& e) {
    throw CliFailure{kExitUsage, e.what()};
  }

  std::ofstream file;
  std::ostream* sink = &out;
  if (a.out != "-") {
    file.open(a.out);
    if (!file) throw CliFailure{kExitUsage, "cannot write " + a.out};
    sink = &file;
  }
  *sink << csv_header() << "\n";
  for (const BenchReport& r : reports)
    for (const std::string& row : csv_rows(r)) *sink << row << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compiler and runtime for fixed-architecture neural network training loops", "nnc"};
  app.require_subcommand(1, 1);
  bool verbose = false;
  bool version = false;
  app.add_flag("--verbose", verbose, "Print the compiled plan to standard error");
  app.add_flag("--version", version, "Print the artifact and tune-table format versions");

  CalibrateArgs cal;
  cal.config.max_threads = default_threads();
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Measure blocked matmul times into a tune table");
  calibrate_cmd->add_option("--max-dim", cal.config.max_dim, "Largest m, k, n")->capture_default_str();
  calibrate_cmd->add_option("--min-dim", cal.config.min_dim, "Smallest m, k, n")->capture_default_str();
  calibrate_cmd->add_option("--max-block", cal.config.max_block, "Largest block size")->capture_default_str();
  calibrate_cmd->add_option("--max-threads", cal.config.max_threads, "Largest thread count")->capture_default_str();
  calibrate_cmd->add_option("--reps", cal.config.reps, "Timed repetitions per point (>= 3)")
      ->capture_default_str()
      ->check(CLI::Range(std::size_t{3}, std::numeric_limits<std::size_t>::max()));
  calibrate_cmd->add_option("--out", cal.out, "Table file to write")->required();

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "Compile a graph and print the plan");
  plan_cmd->add_option("--graph", plan.graph, "JSON graph document")->required();
  plan_cmd->add_option("--table", plan.table, "Tune table")->required();

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Compile and execute a graph; prints the result as JSON");
  run_cmd->add_option("--graph", run_args.graph, "JSON graph document")->required();
  run_cmd->add_option("--table", run_args.table, "Tune table")->required();
  run_cmd->add_option("--threads", run_args.threads, "Thread count override")->check(CLI::PositiveNumber);
  run_cmd->add_option("--seed", run_args.seed, "Seed for values without init")->capture_default_str();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time a reference model; writes CSV");
  bench_cmd->add_option("--algo", bench.algo, "backprop | rbm | ae | ista")->capture_default_str();
  bench_cmd->add_option("--sparsity", bench.sparsity, "dense | lrf | unstructured")->capture_default_str();
  bench_cmd->add_option("--rows", bench.config.sizes.batch, "Batch rows")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--cols", bench.config.sizes.visible, "Visible units")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--hidden", bench.config.sizes.hidden, "Hidden units")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--field", bench.config.field, "LRF field side")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--fill", bench.config.fill, "Unstructured fill fraction")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  bench_cmd->add_option("--runs", bench.config.runs, "Runs")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--iters", bench.config.iters, "Iterations per run")->capture_default_str()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench.config.seed, "Input seed")->capture_default_str();
  bench_cmd->add_flag("--no-fusion", bench.no_fusion, "Skip the fusion pass");
  bench_cmd->add_flag("--no-hoist", bench.no_hoist, "Skip invariant hoisting");
  bench_cmd->add_option("--force-b", bench.force_b, "Block size; a comma list sweeps")->delimiter(',');
  bench_cmd->add_option("--force-t", bench.force_t, "Thread count; a comma list sweeps")->delimiter(',');
  bench_cmd->add_option("--table", bench.table, "Tune table")->required();
  bench_cmd->add_option("--out", bench.out, "CSV file, or - for standard output")->required();
  bench_cmd->footer(
      "CSV columns: " + csv_header() +
      "\n  row: run (one per run) or summary (seconds = mean of the last 5 runs)"
      "\n  seconds: convergence-loop wall time; final_cost on the summary row");

  // --version stands alone.
  for (int i = 1; i < argc; ++i) {
    if (std::string_view(argv[i]) == "--version") {
      out << "nnc " << NNC_VERSION << "\n" << "tune-table format v" << kTuneFormatVersion << "\n";
      return 0;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*calibrate_cmd) return cmd_calibrate(cal, out);
    if (*plan_cmd) return cmd_plan(plan, out);
    if (*run_cmd) return cmd_run(run_args, verbose, out, err);
    return cmd_bench(bench, out);
  } catch (const CliFailure& f) {
    err << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace nnc
