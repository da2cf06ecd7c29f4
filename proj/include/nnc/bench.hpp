// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Timed runs of the reference models: ten runs of a fixed iteration count,
// reporting the mean of the last five, with fusion, hoisting and (b, t)
// ablations.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nnc/autotune.hpp"
#include "nnc/models.hpp"

namespace nnc {

enum class Algorithm { Backprop, Rbm, Ae, Ista };

std::string_view to_string(Algorithm algo);
std::optional<Algorithm> parse_algorithm(std::string_view name);

struct BenchConfig {
  Algorithm algo = Algorithm::Backprop;
  SparsityKind sparsity = SparsityKind::Dense;
  ModelSizes sizes{64, 64, 64};  // rows = batch, cols = visible
  std::size_t field = 16;        // LRF field side
  double fill = 0.1;             // unstructured fill
  std::size_t runs = 10;
  std::size_t iters = 100;
  bool fusion = true;
  bool hoist = true;
  std::optional<std::size_t> force_block;
  std::optional<std::size_t> force_threads;
  std::uint64_t seed = 1;
};

/// Runs at the end of the list that enter the reported mean.
inline constexpr std::size_t kReportedRuns = 5;

struct BenchReport {
  BenchConfig config;
  std::vector<double> run_seconds;  // convergence loop only
  double reported_seconds = 0.0;
  std::size_t iterations = 0;       // of the last run
  std::size_t block = 0;
  std::size_t threads = 0;
  std::vector<std::string> formats;  // "var=format" for every non-derived matrix var
  double final_cost = 0.0;
  ValueMap outputs;  // of the last run
};

/// Mean of the last min(kReportedRuns, size) entries.
double reported_time(std::span<const double> run_seconds);

/// The model a config describes, with its hyperparameters and seeded inputs.
/// Every run starts from these same values, and the loop always runs
/// `iters` iterations.
struct BenchModel {
  Model model;
  ValueMap initial;
};
BenchModel build_bench_model(const BenchConfig& config);

/// Compiles once, then executes `runs` independent runs, timing only the
/// convergence loop. Throws TuneError for an unusable table.
BenchReport run_bench(const BenchConfig& config, const TuneTable& table);

/// One report per (b, t) pair, b outer.
std::vector<BenchReport> run_sweep(BenchConfig config, const TuneTable& table,
                                   const std::vector<std::size_t>& blocks,
                                   const std::vector<std::size_t>& threads);

/// Column names, then one `run` row per run and one `summary` row.
std::string csv_header();
std::vector<std::string> csv_rows(const BenchReport& report);

}  // namespace nnc
