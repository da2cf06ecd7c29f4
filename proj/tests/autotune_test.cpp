// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/autotune.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <unistd.h>

#include "nnc/types.hpp"
#include "support/tables.hpp"

namespace nnc {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("nnc_autotune_" + std::to_string(::getpid()) + "_" + name);
}

// --- grid --------------------------------------------------------------------------

TEST(CalibrationGrid, PowersOfTwoFromTheMinimumDimension) {
  CalibrationConfig c;
  c.max_dim = 256;
  c.max_block = 64;
  c.max_threads = 4;
  c.reps = 3;
  const CalibrationGrid g = calibration_grid(c);
  EXPECT_EQ(g.dims, (std::vector<std::size_t>{32, 64, 128, 256}));
  EXPECT_EQ(g.blocks, (std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64}));
  EXPECT_EQ(g.threads, (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_EQ(g.points(), 4u * 4 * 4 * 7 * 3);
}

TEST(CalibrationGrid, RoundsNonPowersDownAndRejectsFewReps) {
  CalibrationConfig c;
  c.max_dim = 100;
  c.min_dim = 20;
  c.max_block = 20;
  c.max_threads = 3;
  const CalibrationGrid g = calibration_grid(c);
  EXPECT_EQ(g.dims, (std::vector<std::size_t>{32, 64}));
  EXPECT_EQ(g.blocks.back(), 16u);
  EXPECT_EQ(g.threads, (std::vector<std::size_t>{1, 2}));
  c.reps = 0;
  EXPECT_THROW(calibration_grid(c), TuneError);
  c.reps = 2;
  EXPECT_THROW(calibration_grid(c), TuneError);
}

TEST(Calibrate, FillsEveryAffordablePointWithPositiveTimes) {
  CalibrationConfig c;
  c.max_dim = 32;
  c.min_dim = 16;
  c.max_block = 8;
  c.max_threads = 2;
  c.max_bytes = sizeof(double) * 3 * 32 * 32 - 1;  // only the 32^3 point is too big
  const CalibrationReport r = calibrate(c);
  EXPECT_NO_THROW(r.table.check());
  EXPECT_EQ(r.skipped.size(), 4u * 2);
  EXPECT_EQ(r.table.seconds.size(), 7u * 4 * 2);
  for (const auto& [key, s] : r.table.seconds) EXPECT_GT(s, 0.0);
  EXPECT_EQ(r.table.seconds.count({32, 32, 32, 4, 1}), 0u);
  EXPECT_GT(r.table.meta.timestamp, 0);
}

// --- file format ---------------------------------------------------------------------

TEST(TableFile, SaveLoadIsTheIdentity) {
  TuneTable t = testing::synthetic_table();
  t.meta.timestamp = 1760000000;
  t.seconds[{8, 8, 8, 4, 1}] = 0.1;  // a decimal with no exact binary form
  t.seconds[{64, 64, 64, 64, 4}] = 1.0 / 3.0;
  const fs::path path = temp_file("roundtrip.tune");
  save_table(t, path);
  EXPECT_EQ(load_table(path), t);
  EXPECT_EQ(parse_table(format_table(t)), t);
  fs::remove(path);
}

TEST(TableFile, HandWrittenFileLoads) {
  const TuneTable t = parse_table(
      "SONNC-TUNE v1\n"
      "cache l1=32768 l2=1048576\n"
      "axes m=8 k=8 n=8 b=4,8 t=1\n"
      "8 8 8 4 1 0.5\n"
      "8 8 8 8 1 0.25\n");
  EXPECT_EQ(t.meta.l1_bytes, 32768u);
  EXPECT_EQ(t.meta.timestamp, 0);
  EXPECT_EQ(t.seconds.size(), 2u);
  EXPECT_EQ(estimate_time(t, 8, 8, 8, 4, 1).seconds, 0.5);
  const Selection s = select_params(t, {{8, 8, 8, 1.0, "q"}});
  EXPECT_EQ(s.block, 8u);
  EXPECT_EQ(s.threads, 1u);
  EXPECT_EQ(s.predicted_seconds, 0.25);
}

TEST(TableFile, RejectsOtherVersions) {
  std::string text = format_table(testing::synthetic_table({8}, {4}, {1}));
  text.replace(text.find("v1"), 2, "v2");
  try {
    parse_table(text);
    FAIL() << "v2 accepted";
  } catch (const TuneError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
}

TEST(TableFile, RejectsMalformedContent) {
  const std::string head = "SONNC-TUNE v1\ncache l1=1 l2=2\naxes m=8 k=8 n=8 b=4,8 t=1\n";
  EXPECT_THROW(parse_table(""), TuneError);
  EXPECT_THROW(parse_table("NOT-A-TABLE v1\n"), TuneError);
  EXPECT_THROW(parse_table(head + "8 8 8 8 1 0.5\n8 8 8 4 1 0.5\n"), TuneError) << "unsorted";
  EXPECT_THROW(parse_table(head + "8 8 8 16 1 0.5\n"), TuneError) << "off the grid";
  EXPECT_THROW(parse_table(head + "8 8 8 4 1 0\n"), TuneError) << "non-positive";
  EXPECT_THROW(parse_table(head + "8 8 8 4 1 fast\n"), TuneError);
  EXPECT_THROW(parse_table("SONNC-TUNE v1\ncache l1=1 l2=2\naxes m=8 k=8 n=8 b=3 t=1\n"), TuneError);
  EXPECT_THROW(load_table(temp_file("does-not-exist")), TuneError);
}

// --- estimation ----------------------------------------------------------------------

TEST(Estimate, ExactAtEveryGridPoint) {
  const TuneTable t = testing::synthetic_table();
  for (const auto& [key, s] : t.seconds) {
    const Estimate e = estimate_time(t, key[0], key[1], key[2], key[3], key[4]);
    EXPECT_EQ(e.seconds, s);
    EXPECT_FALSE(e.clamped || e.extrapolated);
  }
}

TEST(Estimate, LogSpaceMidpointIsTheMean) {
  const TuneTable t = testing::synthetic_table({8, 32}, {4}, {1});
  const double lo = t.seconds.at({8, 8, 8, 4, 1});
  const double hi = t.seconds.at({32, 8, 8, 4, 1});
  EXPECT_DOUBLE_EQ(estimate_time(t, 16, 8, 8, 4, 1).seconds, 0.5 * (lo + hi));
}

TEST(Estimate, ThreadAxisInterpolatesLinearly) {
  const TuneTable t = testing::synthetic_table({8}, {4}, {2, 8});
  const double at2 = t.seconds.at({8, 8, 8, 4, 2});
  const double at8 = t.seconds.at({8, 8, 8, 4, 8});
  EXPECT_DOUBLE_EQ(estimate_time(t, 8, 8, 8, 4, 4).seconds, at2 + (at8 - at2) / 3.0);
}

TEST(Estimate, ExtrapolatesDimensionsThroughTheLastTwoPoints) {
  const TuneTable t = testing::synthetic_table({8, 16}, {4}, {1},
                                               [](auto m, auto, auto, auto, auto) { return 1.0 + 0.5 * m; });
  const Estimate e = estimate_time(t, 64, 8, 8, 4, 1);
  EXPECT_TRUE(e.extrapolated);
  EXPECT_DOUBLE_EQ(e.seconds, 33.0);
}

TEST(Estimate, ExtrapolationNeverGetsCheaperThanTheLastPoint) {
  // Noisy tail: the 16-point is faster than the 8-point.
  const TuneTable t = testing::synthetic_table({8, 16}, {4}, {1},
                                               [](auto m, auto k, auto, auto, auto) { return m == 16 ? 1.0 : 2.0 + k; });
  EXPECT_EQ(estimate_time(t, 256, 8, 8, 4, 1).seconds, 1.0);
  // Each axis continues its own line from the reduced values.
  EXPECT_GT(estimate_time(t, 8, 256, 8, 4, 1).seconds, estimate_time(t, 8, 16, 8, 4, 1).seconds);
  EXPECT_DOUBLE_EQ(estimate_time(t, 8, 32, 8, 4, 1).seconds, 2.0 + 32);
}

TEST(Estimate, ClampsBelowTheAxesAndBeyondTheThreadRange) {
  const TuneTable t = testing::synthetic_table({8, 16}, {4, 8}, {1, 2});
  const Estimate below = estimate_time(t, 2, 8, 8, 4, 1);
  EXPECT_TRUE(below.clamped);
  EXPECT_EQ(below.seconds, t.seconds.at({8, 8, 8, 4, 1}));
  const Estimate many = estimate_time(t, 8, 8, 8, 4, 16);
  EXPECT_TRUE(many.clamped);
  EXPECT_FALSE(many.extrapolated);
  EXPECT_EQ(many.seconds, t.seconds.at({8, 8, 8, 4, 2}));
}

TEST(Estimate, MissingCornerIsInfinite) {
  TuneTable t = testing::synthetic_table({8, 16}, {4}, {1});
  t.seconds.erase({16, 8, 8, 4, 1});
  EXPECT_TRUE(std::isinf(estimate_time(t, 12, 8, 8, 4, 1).seconds));
  EXPECT_TRUE(std::isfinite(estimate_time(t, 8, 8, 8, 4, 1).seconds));
}

// --- selection -------------------------------------------------------------------------

TEST(Select, FindsTheUniqueMinimum) {
  const TuneTable t = testing::synthetic_table({8, 16}, {2, 4, 8, 16}, {1, 2, 4},
                                               [](auto, auto, auto, std::size_t b, std::size_t th) {
                                                 return (b == 8 && th == 2) ? 1.0 : 2.0 + b + th;
                                               });
  const Selection s = select_params(t, {{8, 16, 8, 1.0, "a"}, {16, 8, 16, 0.5, "b"}});
  EXPECT_EQ(s.block, 8u);
  EXPECT_EQ(s.threads, 2u);
  EXPECT_DOUBLE_EQ(s.predicted_seconds, 1.5);
  EXPECT_DOUBLE_EQ(s.per_query.at("b"), 0.5);
  EXPECT_FALSE(s.clamped);
}

TEST(Select, TiesGoToFewerThreadsThenSmallerBlocks) {
  const TuneTable t =
      testing::synthetic_table({8}, {2, 4, 8}, {1, 2}, [](auto, auto, auto, auto, auto) { return 1.0; });
  const Selection s = select_params(t, {{8, 8, 8, 1.0, "q"}});
  EXPECT_EQ(s.block, 2u);
  EXPECT_EQ(s.threads, 1u);
}

TEST(Select, SingleThreadTablesSelectOneThread) {
  const TuneTable t = testing::synthetic_table({8, 16, 32}, {4, 8, 16}, {1});
  EXPECT_EQ(select_params(t, {{32, 32, 32, 1.0, "q"}}).threads, 1u);
}

TEST(Select, MatchesAnExhaustiveScanOnGridPoints) {
  const TuneTable t = testing::synthetic_table();
  for (std::size_t m : t.m_axis) {
    for (std::size_t n : t.n_axis) {
      double best = std::numeric_limits<double>::infinity();
      std::pair<std::size_t, std::size_t> arg;
      for (std::size_t th : t.t_axis)
        for (std::size_t b : t.b_axis)
          if (const double s = t.seconds.at({m, 32, n, b, th}); s < best) best = s, arg = {b, th};
      const Selection s = select_params(t, {{m, 32, n, 1.0, "q"}});
      EXPECT_EQ(std::pair(s.block, s.threads), arg) << m << "x32x" << n;
      EXPECT_EQ(s.predicted_seconds, best);
    }
  }
}

TEST(Select, RejectsEmptyInputs) {
  EXPECT_THROW(select_params(testing::synthetic_table(), {}), TuneError);
  TuneTable empty = testing::synthetic_table();
  empty.seconds.clear();
  EXPECT_THROW(select_params(empty, {{8, 8, 8, 1.0, "q"}}), TuneError);
}

TEST(Select, DescribeMentionsForcedAndClamped) {
  Selection s;
  s.block = 16;
  s.threads = 2;
  s.forced = true;
  s.clamped = true;
  const std::string d = s.describe();
  EXPECT_EQ(d.rfind("selection b=16 t=2 predicted=", 0), 0u) << d;
  EXPECT_NE(d.find("clamped"), std::string::npos);
  EXPECT_NE(d.find("forced"), std::string::npos);
}

}  // namespace
}  // namespace nnc
