// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Calibration table of measured blocked-matmul times and the interpolating
// selector that picks one block size and thread count per plan.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nnc {

inline constexpr int kTuneFormatVersion = 1;

struct TuneMeta {
  std::size_t l1_bytes = 0;
  std::size_t l2_bytes = 0;
  std::int64_t timestamp = 0;  // seconds since the epoch

  friend bool operator==(const TuneMeta&, const TuneMeta&) = default;
};

/// Key order is (m, k, n, b, t).
using TuneKey = std::array<std::size_t, 5>;

struct TuneTable {
  TuneMeta meta;
  std::vector<std::size_t> m_axis, k_axis, n_axis, b_axis, t_axis;
  std::map<TuneKey, double> seconds;

  /// Throws TuneError unless every axis is strictly increasing powers of 2
  /// and every entry lies on the grid with positive finite seconds.
  void check() const;

  friend bool operator==(const TuneTable&, const TuneTable&) = default;
};

struct CalibrationConfig {
  std::size_t max_dim = 4096;
  std::size_t max_block = 512;
  std::size_t max_threads = 1;
  std::size_t reps = 3;
  std::size_t min_dim = 32;
  /// Grid points whose three operands would exceed this are skipped.
  std::size_t max_bytes = std::size_t{1} << 30;
};

struct CalibrationGrid {
  std::vector<std::size_t> dims, blocks, threads;
  std::size_t points() const { return dims.size() * dims.size() * dims.size() * blocks.size() * threads.size(); }
};

/// Axes of the grid `calibrate` measures: powers of 2 from min_dim (dims)
/// or 1 (blocks, threads) up to the maximum, which is rounded down to a
/// power of 2. Throws TuneError on reps < 3 or zero maxima.
CalibrationGrid calibration_grid(const CalibrationConfig& config);

struct CalibrationReport {
  TuneTable table;
  std::vector<TuneKey> skipped;
};

/// Times a blocked dense matmul at every grid point (median of reps).
CalibrationReport calibrate(const CalibrationConfig& config);

/// L1 and L2 data cache sizes from sysfs, or 0 when unavailable.
std::array<std::size_t, 2> query_cache_sizes();

void save_table(const TuneTable& table, const std::filesystem::path& path);
TuneTable load_table(const std::filesystem::path& path);
std::string format_table(const TuneTable& table);
TuneTable parse_table(const std::string& text);

struct Estimate {
  double seconds = 0.0;
  bool clamped = false;       // a coordinate fell below its axis
  bool extrapolated = false;  // a coordinate fell beyond its axis
};

/// Multilinear interpolation in log2 space over (m, k, n, b); linear in t
/// between the neighbouring calibrated thread counts. Beyond an axis end the
/// value is extended linearly from the last two points; below the start it
/// is clamped. A missing corner makes the estimate infinite.
Estimate estimate_time(const TuneTable& table, std::size_t m, std::size_t k, std::size_t n,
                       std::size_t b, std::size_t t);

struct TuneQuery {
  std::size_t m = 1, k = 1, n = 1;
  double weight = 1.0;
  std::string label;
};

struct Selection {
  std::size_t block = 64;
  std::size_t threads = 1;
  double predicted_seconds = 0.0;
  std::map<std::string, double> per_query;  // label -> weighted seconds
  bool clamped = false;
  bool forced = false;

  std::string describe() const;
};

/// Full scan of the table's (b, t) grid for the smallest weighted estimate;
/// ties go to the smaller t, then the smaller b.
Selection select_params(const TuneTable& table, const std::vector<TuneQuery>& queries);

}  // namespace nnc
