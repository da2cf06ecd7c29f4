// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/bench.hpp"

#include <gtest/gtest.h>

#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "support/tables.hpp"

namespace nnc {
namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  EXPECT_TRUE(ec == std::errc() && p == s.data() + s.size()) << s;
  return v;
}

BenchConfig small_config(Algorithm algo = Algorithm::Backprop) {
  BenchConfig c;
  c.algo = algo;
  c.sizes = {12, 16, 8};
  c.iters = 3;
  c.runs = 10;
  return c;
}

TEST(ReportedTime, MeanOfTheLastFiveRuns) {
  const std::vector<double> runs{10, 9, 8, 7, 6, 1, 2, 3, 4, 5};
  EXPECT_EQ(reported_time(runs), 3.0);
  EXPECT_EQ(reported_time(std::vector<double>{2.0, 4.0}), 3.0);
  EXPECT_EQ(reported_time({}), 0.0);
}

TEST(Algorithms, NamesRoundTrip) {
  for (Algorithm a : {Algorithm::Backprop, Algorithm::Rbm, Algorithm::Ae, Algorithm::Ista})
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  EXPECT_FALSE(parse_algorithm("svm").has_value());
}

TEST(RunBench, TenRunsReportTheMeanOfRunsSixToTen) {
  const BenchReport r = run_bench(small_config(), testing::synthetic_table());
  ASSERT_EQ(r.run_seconds.size(), 10u);
  const double tail = std::accumulate(r.run_seconds.begin() + 5, r.run_seconds.end(), 0.0) / 5.0;
  EXPECT_EQ(r.reported_seconds, tail);
  EXPECT_EQ(r.iterations, 3u);
  EXPECT_TRUE(std::isfinite(r.final_cost));
  for (double s : r.run_seconds) EXPECT_GT(s, 0.0);
}

TEST(RunBench, FormatsFollowTheSparsityKind) {
  BenchConfig c = small_config();
  c.sizes = {8, 32, 32};
  c.runs = 1;
  c.sparsity = SparsityKind::Lrf;
  c.field = 4;
  auto has = [](const BenchReport& r, const std::string& s) {
    return std::find(r.formats.begin(), r.formats.end(), s) != r.formats.end();
  };
  EXPECT_TRUE(has(run_bench(c, testing::synthetic_table()), "W=GeneralSparseCSB"));
  c.field = 16;
  EXPECT_TRUE(has(run_bench(c, testing::synthetic_table()), "W=LocallyDense"));
  c.sparsity = SparsityKind::Dense;
  EXPECT_TRUE(has(run_bench(c, testing::synthetic_table()), "W=DenseBlocked"));
}

TEST(RunBench, AblationsDoNotChangeResults) {
  for (Algorithm a : {Algorithm::Backprop, Algorithm::Rbm, Algorithm::Ae, Algorithm::Ista}) {
    BenchConfig c = small_config(a);
    c.runs = 1;
    c.iters = 6;
    const BenchReport base = run_bench(c, testing::synthetic_table());
    for (auto [fusion, hoist] : {std::pair{false, true}, {true, false}, {false, false}}) {
      c.fusion = fusion;
      c.hoist = hoist;
      const BenchReport r = run_bench(c, testing::synthetic_table());
      for (const auto& [id, m] : base.outputs)
        EXPECT_LE(relative_difference(r.outputs.at(id), m), 1e-10) << to_string(a) << " " << id;
    }
  }
}

TEST(RunBench, RejectsZeroRunsOrIterations) {
  BenchConfig c = small_config();
  c.runs = 0;
  EXPECT_THROW(run_bench(c, testing::synthetic_table()), GraphError);
  c = small_config();
  c.iters = 0;
  EXPECT_THROW(run_bench(c, testing::synthetic_table()), GraphError);
}

TEST(RunSweep, BlocksOuterThreadsInner) {
  BenchConfig c = small_config();
  c.runs = 1;
  const auto reports = run_sweep(c, testing::synthetic_table(), {4, 8}, {1, 2, 3, 4});
  ASSERT_EQ(reports.size(), 8u);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    EXPECT_EQ(reports[i].block, i < 4 ? 4u : 8u);
    EXPECT_EQ(reports[i].threads, i % 4 + 1);
    EXPECT_EQ(reports[i].outputs, reports[0].outputs) << "thread and block counts are bitwise neutral";
  }
}

TEST(Csv, OneRowPerRunPlusASummaryThatRecomputesExactly) {
  const BenchReport r = run_bench(small_config(), testing::synthetic_table());
  const auto header = split(csv_header(), ',');
  EXPECT_EQ(header.size(), 19u);
  const auto rows = csv_rows(r);
  ASSERT_EQ(rows.size(), 11u);
  std::vector<double> seconds;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto f = split(rows[i], ',');
    ASSERT_EQ(f.size(), header.size()) << rows[i];
    EXPECT_EQ(f[0], "run");
    EXPECT_EQ(f[16], std::to_string(i + 1));
    seconds.push_back(parse_double(f[17]));
    EXPECT_EQ(seconds.back(), r.run_seconds[i]);
  }
  const auto summary = split(rows.back(), ',');
  ASSERT_EQ(summary.size(), header.size());
  EXPECT_EQ(summary[0], "summary");
  EXPECT_EQ(summary[1], "backprop");
  EXPECT_EQ(summary[14], "0") << "not forced";
  const double tail = std::accumulate(seconds.begin() + 5, seconds.end(), 0.0) / 5.0;
  EXPECT_EQ(parse_double(summary[17]), tail);
  EXPECT_EQ(parse_double(summary[18]), r.final_cost);
}

}  // namespace
}  // namespace nnc
