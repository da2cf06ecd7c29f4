// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/storage.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <limits>
#include <map>
#include <tuple>

namespace nnc {

namespace {

constexpr std::array<std::pair<Format, std::string_view>, 4> kFormatNames{{
    {Format::DenseBlocked, "DenseBlocked"},
    {Format::LocallyDense, "LocallyDense"},
    {Format::GeneralSparseCSB, "GeneralSparseCSB"},
    {Format::HybridCSB, "HybridCSB"},
}};

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::string_view to_string(Format format) {
  for (const auto& [f, name] : kFormatNames)
    if (f == format) return name;
  return "?";
}

std::string_view to_string(Layout layout) { return layout == Layout::RowMajor ? "row" : "col"; }

std::optional<Format> parse_format(std::string_view name) {
  for (const auto& [f, n] : kFormatNames)
    if (n == name) return f;
  return std::nullopt;
}

Format choose_format(const SparsityPattern& pattern, Shape shape) {
  if (pattern.is_dense()) return Format::DenseBlocked;
  if (pattern.is_block_list()) {
    const auto& blocks = pattern.blocks();
    if (blocks.empty()) return Format::GeneralSparseCSB;
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (const Block& b : blocks) smallest = std::min({smallest, b.rows, b.cols});
    return smallest >= kLocallyDenseMinField ? Format::LocallyDense : Format::GeneralSparseCSB;
  }
  const double fill = static_cast<double>(pattern.nonzeros(shape)) / static_cast<double>(shape.size());
  return fill >= kDenseFillThreshold ? Format::HybridCSB : Format::GeneralSparseCSB;
}

std::optional<std::string> format_mismatch(Format format, const SparsityPattern& pattern) {
  switch (format) {
    case Format::DenseBlocked:
      if (!pattern.is_dense()) return "DenseBlocked requires a dense pattern";
      break;
    case Format::LocallyDense:
      if (!pattern.is_block_list()) return "LocallyDense requires a block-list pattern";
      break;
    case Format::GeneralSparseCSB:
    case Format::HybridCSB:
      if (pattern.is_dense()) return std::string(to_string(format)) + " requires a sparse pattern";
      break;
  }
  return std::nullopt;
}

std::string describe(const StorageDecision& d) {
  return "var=" + d.var + " format=" + std::string(to_string(d.format)) +
         " b=" + std::to_string(d.block) + " layout=" + std::string(to_string(d.layout));
}

// ---------------------------------------------------------------------------
// PackedMatrix construction
// ---------------------------------------------------------------------------

PackedMatrix::PackedMatrix(Shape shape, const SparsityPattern& pattern,
                           const StorageDecision& decision)
    : shape_(shape), decision_(decision) {
  if (shape.rows == 0 || shape.cols == 0) throw StorageError("cannot store an empty shape");
  if (decision.block == 0) throw StorageError("block size must be positive");
  if (auto why = format_mismatch(decision.format, pattern)) {
    throw StorageError("var '" + decision.var + "': " + *why);
  }
  if (auto why = pattern.check(shape)) throw StorageError("var '" + decision.var + "': " + *why);
  grid_rows_ = ceil_div(shape.rows, decision.block);
  grid_cols_ = ceil_div(shape.cols, decision.block);
  build(pattern);
}

void PackedMatrix::build(const SparsityPattern& pattern) {
  const std::size_t b = decision_.block;
  const bool row_major = decision_.layout == Layout::RowMajor;
  std::size_t offset = 0;

  auto tile_rows = [&](std::size_t br) { return std::min(b, shape_.rows - br * b); };
  auto tile_cols = [&](std::size_t bc) { return std::min(b, shape_.cols - bc * b); };

  if (decision_.format == Format::DenseBlocked) {
    grid_.assign(grid_rows_ * grid_cols_, -1);
    for (std::size_t br = 0; br < grid_rows_; ++br) {
      for (std::size_t bc = 0; bc < grid_cols_; ++bc) {
        StoredBlock blk;
        blk.block_row = br;
        blk.block_col = bc;
        blk.row0 = br * b;
        blk.col0 = bc * b;
        blk.rows = tile_rows(br);
        blk.cols = tile_cols(bc);
        blk.value_offset = offset;
        blk.count = blk.rows * blk.cols;
        offset += blk.count;
        grid_[br * grid_cols_ + bc] = static_cast<std::int32_t>(blocks_.size());
        blocks_.push_back(blk);
      }
    }
    values_.assign(offset, 0.0);
    return;
  }

  if (decision_.format == Format::LocallyDense) {
    std::vector<Block> fields = pattern.blocks();
    std::stable_sort(fields.begin(), fields.end(), [&](const Block& x, const Block& y) {
      return std::make_tuple(x.row0 / b, x.col0 / b, x.row0, x.col0) <
             std::make_tuple(y.row0 / b, y.col0 / b, y.row0, y.col0);
    });
    std::vector<std::vector<std::uint32_t>> per_tile(grid_rows_ * grid_cols_);
    for (const Block& f : fields) {
      StoredBlock blk;
      blk.block_row = f.row0 / b;
      blk.block_col = f.col0 / b;
      blk.row0 = f.row0;
      blk.col0 = f.col0;
      blk.rows = f.rows;
      blk.cols = f.cols;
      blk.value_offset = offset;
      blk.count = f.rows * f.cols;
      offset += blk.count;
      const auto id = static_cast<std::uint32_t>(blocks_.size());
      for (std::size_t br = f.row0 / b; br <= (f.row0 + f.rows - 1) / b; ++br)
        for (std::size_t bc = f.col0 / b; bc <= (f.col0 + f.cols - 1) / b; ++bc)
          per_tile[br * grid_cols_ + bc].push_back(id);
      blocks_.push_back(blk);
    }
    field_index_offsets_.assign(1, 0);
    for (const auto& list : per_tile) {
      field_index_.insert(field_index_.end(), list.begin(), list.end());
      field_index_offsets_.push_back(static_cast<std::uint32_t>(field_index_.size()));
    }
    values_.assign(offset, 0.0);
    return;
  }

  // Compressed sparse blocks: bucket positions by grid tile, then order each
  // tile's entries by layout.
  struct Entry {
    std::size_t tile;
    std::uint32_t major;
    std::uint32_t minor;
  };
  std::vector<Entry> entries;
  for (const Coord& p : pattern.positions(shape_)) {
    const std::size_t br = p.row / b;
    const std::size_t bc = p.col / b;
    const auto lr = static_cast<std::uint32_t>(p.row - br * b);
    const auto lc = static_cast<std::uint32_t>(p.col - bc * b);
    entries.push_back({br * grid_cols_ + bc, row_major ? lr : lc, row_major ? lc : lr});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
    return std::tie(x.tile, x.major, x.minor) < std::tie(y.tile, y.major, y.minor);
  });

  grid_.assign(grid_rows_ * grid_cols_, -1);
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    while (j < entries.size() && entries[j].tile == entries[i].tile) ++j;
    const std::size_t tile = entries[i].tile;
    StoredBlock blk;
    blk.block_row = tile / grid_cols_;
    blk.block_col = tile % grid_cols_;
    blk.row0 = blk.block_row * b;
    blk.col0 = blk.block_col * b;
    blk.rows = tile_rows(blk.block_row);
    blk.cols = tile_cols(blk.block_col);
    blk.value_offset = offset;
    const std::size_t n = j - i;
    const std::size_t area = blk.rows * blk.cols;
    const bool dense = decision_.format == Format::HybridCSB &&
                       static_cast<double>(n) >= kDenseFillThreshold * static_cast<double>(area);
    if (dense) {
      blk.dense = true;
      blk.count = area;
      if (n < area) {
        blk.masked = true;
        blk.mask_offset = masks_.size();
        masks_.resize(masks_.size() + area, 0);
        for (std::size_t e = i; e < j; ++e) {
          const std::size_t lr = row_major ? entries[e].major : entries[e].minor;
          const std::size_t lc = row_major ? entries[e].minor : entries[e].major;
          masks_[blk.mask_offset + lr * blk.cols + lc] = 1;
        }
      }
    } else {
      blk.dense = false;
      blk.count = n;
      blk.coord_offset = coords_.size();
      for (std::size_t e = i; e < j; ++e) {
        coords_.push_back(row_major ? LocalCoord{entries[e].major, entries[e].minor}
                                    : LocalCoord{entries[e].minor, entries[e].major});
      }
    }
    offset += blk.count;
    grid_[tile] = static_cast<std::int32_t>(blocks_.size());
    blocks_.push_back(blk);
    i = j;
  }
  values_.assign(offset, 0.0);
}

PackedMatrix PackedMatrix::pack(const Matrix& values, const SparsityPattern& pattern,
                                const StorageDecision& decision) {
  PackedMatrix p(values.shape(), pattern, decision);
  for (const StoredBlock& blk : p.blocks_) {
    double* out = p.values_.data() + blk.value_offset;
    if (!blk.dense) {
      const LocalCoord* c = p.coords_.data() + blk.coord_offset;
      for (std::size_t i = 0; i < blk.count; ++i) out[i] = values(blk.row0 + c[i].row, blk.col0 + c[i].col);
      continue;
    }
    const std::uint8_t* m = blk.masked ? p.masks_.data() + blk.mask_offset : nullptr;
    for (std::size_t r = 0; r < blk.rows; ++r) {
      for (std::size_t c = 0; c < blk.cols; ++c) {
        if (m && !m[r * blk.cols + c]) continue;
        out[p.offset_in(blk, r, c)] = values(blk.row0 + r, blk.col0 + c);
      }
    }
  }
  return p;
}

Matrix PackedMatrix::unpack() const {
  Matrix m(shape_);
  for_each_entry([&](std::size_t r, std::size_t c, double v) { m(r, c) = v; });
  return m;
}

// ---------------------------------------------------------------------------
// Access
// ---------------------------------------------------------------------------

std::size_t PackedMatrix::offset_in(const StoredBlock& blk, std::size_t r, std::size_t c) const {
  return decision_.layout == Layout::RowMajor ? r * blk.cols + c : c * blk.rows + r;
}

std::span<const LocalCoord> PackedMatrix::coords(const StoredBlock& blk) const {
  if (blk.dense) return {};
  return {coords_.data() + blk.coord_offset, blk.count};
}

std::span<const std::uint8_t> PackedMatrix::mask(const StoredBlock& blk) const {
  if (!blk.masked) return {};
  return {masks_.data() + blk.mask_offset, blk.rows * blk.cols};
}

const StoredBlock* PackedMatrix::tile(std::size_t block_row, std::size_t block_col) const {
  if (grid_.empty() || block_row >= grid_rows_ || block_col >= grid_cols_) return nullptr;
  const std::int32_t id = grid_[block_row * grid_cols_ + block_col];
  return id < 0 ? nullptr : &blocks_[static_cast<std::size_t>(id)];
}

std::span<const std::uint32_t> PackedMatrix::fields_in_tile(std::size_t block_row,
                                                            std::size_t block_col) const {
  if (field_index_offsets_.empty()) return {};
  const std::size_t t = block_row * grid_cols_ + block_col;
  return {field_index_.data() + field_index_offsets_[t],
          field_index_offsets_[t + 1] - field_index_offsets_[t]};
}

namespace {

/// Copies the part of a dense unit that falls into the source region
/// [sr0,sr1) x [sc0,sc1) (untransposed coordinates).
struct RegionCopy {
  bool transposed;
  std::size_t r0, c0;  // origin of the requested region in logical coordinates
  double* out;
  std::size_t ld;

  void dense_unit(const StoredBlock& blk, const double* v, Layout layout, const std::uint8_t* mask,
                  std::size_t sr0, std::size_t sr1, std::size_t sc0, std::size_t sc1) const {
    const std::size_t ir0 = std::max(sr0, blk.row0), ir1 = std::min(sr1, blk.row0 + blk.rows);
    const std::size_t ic0 = std::max(sc0, blk.col0), ic1 = std::min(sc1, blk.col0 + blk.cols);
    if (ir0 >= ir1 || ic0 >= ic1) return;
    const bool row_major = layout == Layout::RowMajor;
    if (mask) {
      for (std::size_t r = ir0; r < ir1; ++r)
        for (std::size_t c = ic0; c < ic1; ++c) {
          const std::size_t lr = r - blk.row0, lc = c - blk.col0;
          if (!mask[lr * blk.cols + lc]) continue;
          const double x = v[row_major ? lr * blk.cols + lc : lc * blk.rows + lr];
          put(r, c, x);
        }
      return;
    }
    if (!transposed && row_major) {
      for (std::size_t r = ir0; r < ir1; ++r) {
        std::memcpy(out + (r - r0) * ld + (ic0 - c0),
                    v + (r - blk.row0) * blk.cols + (ic0 - blk.col0), (ic1 - ic0) * sizeof(double));
      }
    } else if (transposed && !row_major) {
      for (std::size_t c = ic0; c < ic1; ++c) {
        std::memcpy(out + (c - r0) * ld + (ir0 - c0),
                    v + (c - blk.col0) * blk.rows + (ir0 - blk.row0), (ir1 - ir0) * sizeof(double));
      }
    } else if (!transposed) {  // column-major source, untransposed
      for (std::size_t c = ic0; c < ic1; ++c) {
        const double* col = v + (c - blk.col0) * blk.rows + (ir0 - blk.row0);
        double* dst = out + (ir0 - r0) * ld + (c - c0);
        for (std::size_t i = 0; i < ir1 - ir0; ++i) dst[i * ld] = col[i];
      }
    } else {  // row-major source, transposed
      for (std::size_t r = ir0; r < ir1; ++r) {
        const double* row = v + (r - blk.row0) * blk.cols + (ic0 - blk.col0);
        double* dst = out + (ic0 - r0) * ld + (r - c0);
        for (std::size_t i = 0; i < ic1 - ic0; ++i) dst[i * ld] = row[i];
      }
    }
  }

  void put(std::size_t r, std::size_t c, double x) const {
    if (transposed) {
      out[(c - r0) * ld + (r - c0)] = x;
    } else {
      out[(r - r0) * ld + (c - c0)] = x;
    }
  }
};

}  // namespace

void PackedMatrix::gather(bool transposed, std::size_t r0, std::size_t r1, std::size_t c0,
                          std::size_t c1, double* out, std::size_t ld) const {
  // Source (untransposed) region.
  const std::size_t sr0 = transposed ? c0 : r0, sr1 = transposed ? c1 : r1;
  const std::size_t sc0 = transposed ? r0 : c0, sc1 = transposed ? r1 : c1;
  if (sr1 > shape_.rows || sc1 > shape_.cols || sr0 >= sr1 || sc0 >= sc1) {
    throw StorageError("gather region outside " + shape_.str());
  }
  const RegionCopy copy{transposed, r0, c0, out, ld};
  const std::size_t b = decision_.block;
  const std::size_t br0 = sr0 / b, br1 = (sr1 - 1) / b;
  const std::size_t bc0 = sc0 / b, bc1 = (sc1 - 1) / b;

  if (decision_.format != Format::DenseBlocked) {
    for (std::size_t r = r0; r < r1; ++r) std::fill_n(out + (r - r0) * ld, c1 - c0, 0.0);
  }

  if (decision_.format == Format::LocallyDense) {
    std::vector<std::uint32_t> ids;
    for (std::size_t br = br0; br <= br1; ++br)
      for (std::size_t bc = bc0; bc <= bc1; ++bc)
        for (std::uint32_t f : fields_in_tile(br, bc)) ids.push_back(f);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (std::uint32_t f : ids) {
      const StoredBlock& blk = blocks_[f];
      copy.dense_unit(blk, values_.data() + blk.value_offset, decision_.layout, nullptr, sr0, sr1,
                      sc0, sc1);
    }
    return;
  }

  for (std::size_t br = br0; br <= br1; ++br) {
    for (std::size_t bc = bc0; bc <= bc1; ++bc) {
      const StoredBlock* blk = tile(br, bc);
      if (!blk) continue;
      const double* v = values_.data() + blk->value_offset;
      if (blk->dense) {
        copy.dense_unit(*blk, v, decision_.layout,
                        blk->masked ? masks_.data() + blk->mask_offset : nullptr, sr0, sr1, sc0, sc1);
        continue;
      }
      const LocalCoord* c = coords_.data() + blk->coord_offset;
      for (std::size_t i = 0; i < blk->count; ++i) {
        const std::size_t r = blk->row0 + c[i].row, col = blk->col0 + c[i].col;
        if (r >= sr0 && r < sr1 && col >= sc0 && col < sc1) copy.put(r, col, v[i]);
      }
    }
  }
}

bool PackedMatrix::same_structure(const PackedMatrix& other) const {
  if (this == &other) return true;
  if (shape_ != other.shape_ || decision_.format != other.decision_.format ||
      decision_.block != other.decision_.block || decision_.layout != other.decision_.layout ||
      blocks_.size() != other.blocks_.size() || values_.size() != other.values_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const StoredBlock& x = blocks_[i];
    const StoredBlock& y = other.blocks_[i];
    if (x.row0 != y.row0 || x.col0 != y.col0 || x.rows != y.rows || x.cols != y.cols ||
        x.count != y.count || x.dense != y.dense || x.masked != y.masked) {
      return false;
    }
  }
  if (coords_.size() != other.coords_.size() || masks_ != other.masks_) return false;
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    if (coords_[i].row != other.coords_[i].row || coords_[i].col != other.coords_[i].col) return false;
  }
  return true;
}

std::vector<Coord> PackedMatrix::stored_positions() const {
  std::vector<Coord> out;
  for_each_entry([&](std::size_t r, std::size_t c, double) { out.push_back({r, c}); });
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace nnc

namespace nnc {

std::vector<StorageDecision> plan_storage(const ExecutionGraph& graph, std::size_t block) {
  if (block == 0) throw StorageError("block size must be positive");
  const auto patterns = infer_patterns(graph);

  std::map<std::string, std::pair<std::size_t, std::size_t>> uses;  // (right operand, other)
  for (const OpNode& n : graph.nodes) {
    const bool product = n.kind == OpKind::MatMul ||
                         (n.kind == OpKind::MultBiasSigm && n.attrs.product == OpKind::MatMul);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      auto& u = uses[n.inputs[i]];
      (product && i == 1 ? u.first : u.second) += 1;
    }
  }
  auto layout_by_use = [&](const std::string& id) {
    auto it = uses.find(id);
    return it != uses.end() && it->second.first > it->second.second ? Layout::ColMajor
                                                                    : Layout::RowMajor;
  };

  std::vector<StorageDecision> out;
  std::map<std::string, std::size_t> index;
  auto add = [&](const std::string& id, const SparsityPattern& pattern, Shape shape, Layout layout) {
    index[id] = out.size();
    out.push_back({id, choose_format(pattern, shape), block, layout});
  };
  for (const VarDecl& v : graph.vars) {
    if (v.role == Role::Derived) continue;
    add(v.id, *patterns.at(v.id), v.shape, layout_by_use(v.id));
  }
  for (const OpNode& n : graph.nodes) {
    const SparsityPattern& p = *patterns.at(n.id);
    Layout layout = layout_by_use(n.id);
    if (!p.is_dense()) {
      for (const VarDecl& v : graph.vars) {
        if (v.role != Role::Derived && v.pattern == p && v.shape == n.out_shape) {
          layout = out[index.at(v.id)].layout;
          break;
        }
      }
    }
    add(n.id, p, n.out_shape, layout);
  }
  for (const auto& [state, producer] : graph.updates) {
    auto s = index.find(state);
    auto p = index.find(producer);
    if (s == index.end() || p == index.end()) continue;
    out[p->second].format = out[s->second].format;
    out[p->second].layout = out[s->second].layout;
  }
  return out;
}

}  // namespace nnc
