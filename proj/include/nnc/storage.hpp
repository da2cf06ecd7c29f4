// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Physical matrix formats. Every format partitions the matrix on a square
// grid of side `block` (LocallyDense stores whole fields instead); trailing
// grid tiles keep their true, smaller dimensions.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nnc/graph.hpp"
#include "nnc/types.hpp"

namespace nnc {

enum class Format { DenseBlocked, LocallyDense, GeneralSparseCSB, HybridCSB };
enum class Layout { RowMajor, ColMajor };

std::string_view to_string(Format format);
std::string_view to_string(Layout layout);  // "row" / "col"
std::optional<Format> parse_format(std::string_view name);

/// Smallest field side that is still stored densely.
inline constexpr std::size_t kLocallyDenseMinField = 5;
/// Fill fraction at and above which a coordinate pattern (or a hybrid
/// block) is stored densely.
inline constexpr double kDenseFillThreshold = 0.5;

Format choose_format(const SparsityPattern& pattern, Shape shape);
/// Reason the pairing is illegal, or nothing.
std::optional<std::string> format_mismatch(Format format, const SparsityPattern& pattern);

struct StorageDecision {
  std::string var;
  Format format = Format::DenseBlocked;
  std::size_t block = 64;
  Layout layout = Layout::RowMajor;

  friend bool operator==(const StorageDecision&, const StorageDecision&) = default;
};

/// `var=<id> format=<name> b=<n> layout=<row|col>`
std::string describe(const StorageDecision& decision);

/// A decision for every value of the graph (non-derived vars and node
/// outputs), all with block size `block`. Format follows choose_format on the
/// value's pattern. A value read mostly as the right operand of a product is
/// ColMajor, otherwise RowMajor; sparse node outputs copy the layout of the
/// var declaring their pattern, and update producers copy their state var so
/// the two buffers can be swapped.
std::vector<StorageDecision> plan_storage(const ExecutionGraph& graph, std::size_t block);

struct LocalCoord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
};

/// One stored unit: a grid tile, or a field for LocallyDense.
struct StoredBlock {
  std::size_t block_row = 0;  // grid coordinates of the unit's origin
  std::size_t block_col = 0;
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t value_offset = 0;
  std::size_t count = 0;  // stored values
  std::size_t coord_offset = 0;
  bool dense = true;  // values cover the whole rows x cols region in layout order
  bool masked = false;  // dense hybrid tile: only `mask` positions are in the pattern
  std::size_t mask_offset = 0;
};

class PackedMatrix {
 public:
  PackedMatrix() = default;

  /// Zero-valued storage for `pattern`.
  PackedMatrix(Shape shape, const SparsityPattern& pattern, const StorageDecision& decision);

  /// Copies the positions of `pattern` out of `values`; everything else is
  /// ignored.
  static PackedMatrix pack(const Matrix& values, const SparsityPattern& pattern,
                           const StorageDecision& decision);
  /// Off-pattern entries are exactly zero.
  Matrix unpack() const;

  Shape shape() const { return shape_; }
  const StorageDecision& decision() const { return decision_; }
  Format format() const { return decision_.format; }
  Layout layout() const { return decision_.layout; }
  std::size_t block() const { return decision_.block; }
  std::size_t grid_rows() const { return grid_rows_; }
  std::size_t grid_cols() const { return grid_cols_; }
  bool is_sparse() const { return decision_.format != Format::DenseBlocked; }

  /// Stored units in block-row-major order; empty sparse tiles are absent.
  std::span<const StoredBlock> blocks() const { return blocks_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values(const StoredBlock& blk) { return {values_.data() + blk.value_offset, blk.count}; }
  std::span<const double> values(const StoredBlock& blk) const {
    return {values_.data() + blk.value_offset, blk.count};
  }
  /// In-block coordinates of a sparse unit, in layout order.
  std::span<const LocalCoord> coords(const StoredBlock& blk) const;
  /// In-tile pattern flags of a masked dense unit (row-major in the tile).
  std::span<const std::uint8_t> mask(const StoredBlock& blk) const;

  /// Stored unit at a grid tile, or nullptr (not for LocallyDense).
  const StoredBlock* tile(std::size_t block_row, std::size_t block_col) const;
  /// Fields intersecting a grid tile (LocallyDense only).
  std::span<const std::uint32_t> fields_in_tile(std::size_t block_row, std::size_t block_col) const;

  /// Writes the region [r0,r1) x [c0,c1) of this matrix (of its transpose
  /// when `transposed`) row-major into `out` with leading dimension `ld`.
  void gather(bool transposed, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1,
              double* out, std::size_t ld) const;

  /// Visits every stored position in layout order within each unit.
  template <typename Fn>
  void for_each_entry(Fn&& fn) const;

  /// Calls fn(block, values, coords) for every stored unit in order.
  template <typename Fn>
  void iterate_blocks(Fn&& fn) const {
    for (const StoredBlock& blk : blocks_) fn(blk, values(blk), coords(blk));
  }

  /// Same shape, decision and stored positions.
  bool same_structure(const PackedMatrix& other) const;
  /// Stored positions as a pattern over the full matrix (row-major).
  std::vector<Coord> stored_positions() const;

 private:
  void build(const SparsityPattern& pattern);
  std::size_t offset_in(const StoredBlock& blk, std::size_t r, std::size_t c) const;

  Shape shape_{};
  StorageDecision decision_;
  std::size_t grid_rows_ = 0;
  std::size_t grid_cols_ = 0;
  std::vector<StoredBlock> blocks_;
  std::vector<double> values_;
  std::vector<LocalCoord> coords_;
  std::vector<std::uint8_t> masks_;
  std::vector<std::int32_t> grid_;  // tile -> stored unit, -1 when empty
  std::vector<std::uint32_t> field_index_offsets_;
  std::vector<std::uint32_t> field_index_;
};

template <typename Fn>
void PackedMatrix::for_each_entry(Fn&& fn) const {
  for (const StoredBlock& blk : blocks_) {
    const double* v = values_.data() + blk.value_offset;
    if (!blk.dense) {
      const LocalCoord* c = coords_.data() + blk.coord_offset;
      for (std::size_t i = 0; i < blk.count; ++i) fn(blk.row0 + c[i].row, blk.col0 + c[i].col, v[i]);
      continue;
    }
    const std::uint8_t* m = blk.masked ? masks_.data() + blk.mask_offset : nullptr;
    for (std::size_t i = 0; i < blk.count; ++i) {
      std::size_t r, c;
      if (decision_.layout == Layout::RowMajor) {
        r = i / blk.cols;
        c = i % blk.cols;
      } else {
        c = i / blk.rows;
        r = i % blk.rows;
      }
      if (m && !m[r * blk.cols + c]) continue;
      fn(blk.row0 + r, blk.col0 + c, v[i]);
    }
  }
}

}  // namespace nnc
