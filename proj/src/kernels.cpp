// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace nnc::kernels {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double soft_shrink(double x, double theta) {
  if (x > theta) return x - theta;
  if (x < -theta) return x + theta;
  return 0.0;
}

double apply(OpKind op, double a, double b, double theta) {
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
      return std::abs(a);
    case OpKind::Sigmoid:
      return sigmoid(a);
    case OpKind::SoftShrink:
      return soft_shrink(a, theta);
    default:
      throw ExecError("not an elementwise op: " + std::string(to_string(op)));
  }
}

namespace {

// Per-thread scratch. Each buffer only grows.
struct Scratch {
  std::vector<double> acc;
  std::vector<double> left;
  std::vector<double> right;
  std::vector<double> temps;
  std::vector<double> inputs;

  static double* sized(std::vector<double>& v, std::size_t n) {
    if (v.size() < n) v.resize(n);
    return v.data();
  }
};

thread_local Scratch scratch;

// ---------------------------------------------------------------------------
// Dense micro-kernel
// ---------------------------------------------------------------------------

// Each output element is one ascending-k multiply-add chain, so the
// result does not depend on the tile shape or the block size.
#if defined(__AVX512F__)
constexpr std::size_t kLanes = 8;
constexpr std::size_t kMR = 8;
#else
constexpr std::size_t kLanes = 4;
constexpr std::size_t kMR = 4;
#endif
constexpr std::size_t kNR = 2 * kLanes;

using Vec = double __attribute__((vector_size(kLanes * sizeof(double))));

inline Vec load(const double* p) {
  Vec v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store(double* p, Vec v) { std::memcpy(p, &v, sizeof v); }

inline void micro_full(std::size_t k, const double* a, std::size_t lda, const double* b,
                       std::size_t ldb, double* c, std::size_t ldc) {
  Vec lo[kMR], hi[kMR];
#pragma GCC unroll 8
  for (std::size_t r = 0; r < kMR; ++r) {
    lo[r] = load(c + r * ldc);
    hi[r] = load(c + r * ldc + kLanes);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const Vec b0 = load(b + p * ldb);
    const Vec b1 = load(b + p * ldb + kLanes);
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kMR; ++r) {
      const double av = a[r * lda + p];
      lo[r] += av * b0;
      hi[r] += av * b1;
    }
  }
#pragma GCC unroll 8
  for (std::size_t r = 0; r < kMR; ++r) {
    store(c + r * ldc, lo[r]);
    store(c + r * ldc + kLanes, hi[r]);
  }
}

inline void micro_edge(std::size_t mr, std::size_t nr, std::size_t k, const double* a,
                       std::size_t lda, const double* b, std::size_t ldb, double* c,
                       std::size_t ldc) {
  for (std::size_t r = 0; r < mr; ++r) {
    double* crow = c + r * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[r * lda + p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < nr; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

void gemm_dense(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + kMR <= m; i += kMR) {
    std::size_t j = 0;
    for (; j + kNR <= n; j += kNR) micro_full(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    if (j < n) micro_edge(kMR, n - j, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
  }
  if (i < m) micro_edge(m - i, n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
}

namespace {

// ---------------------------------------------------------------------------
// Operand access
// ---------------------------------------------------------------------------

struct Operand {
  const PackedMatrix& m;
  bool transposed;

  std::size_t rows() const { return transposed ? m.shape().cols : m.shape().rows; }
  std::size_t cols() const { return transposed ? m.shape().rows : m.shape().cols; }
};

enum class TileKind { Empty, Coords, Dense };

struct TileClass {
  TileKind kind;
  const StoredBlock* unit = nullptr;  // set for Coords and for directly readable dense tiles
};

/// How the logical region [r0,r1) x [c0,c1) of `op` can be read.
TileClass classify(const Operand& op, std::size_t r0, std::size_t r1, std::size_t c0,
                   std::size_t c1) {
  const PackedMatrix& m = op.m;
  const std::size_t sr0 = op.transposed ? c0 : r0, sr1 = op.transposed ? c1 : r1;
  const std::size_t sc0 = op.transposed ? r0 : c0, sc1 = op.transposed ? r1 : c1;
  const std::size_t b = m.block();
  const std::size_t br0 = sr0 / b, br1 = (sr1 - 1) / b;
  const std::size_t bc0 = sc0 / b, bc1 = (sc1 - 1) / b;

  if (m.format() == Format::LocallyDense) {
    for (std::size_t br = br0; br <= br1; ++br)
      for (std::size_t bc = bc0; bc <= bc1; ++bc)
        for (std::uint32_t f : m.fields_in_tile(br, bc)) {
          const StoredBlock& blk = m.blocks()[f];
          if (blk.row0 < sr1 && blk.row0 + blk.rows > sr0 && blk.col0 < sc1 && blk.col0 + blk.cols > sc0) {
            return {TileKind::Dense};
          }
        }
    return {TileKind::Empty};
  }

  const bool single = br0 == br1 && bc0 == bc1;
  if (single) {
    const StoredBlock* blk = m.tile(br0, bc0);
    if (!blk) return {TileKind::Empty};
    const bool whole = sr0 == blk->row0 && sr1 == blk->row0 + blk->rows && sc0 == blk->col0 &&
                       sc1 == blk->col0 + blk->cols;
    if (!blk->dense) return {TileKind::Coords, blk};
    if (whole && !blk->masked) return {TileKind::Dense, blk};
    return {TileKind::Dense};
  }
  if (m.format() != Format::DenseBlocked) {
    bool any = false;
    for (std::size_t br = br0; br <= br1 && !any; ++br)
      for (std::size_t bc = bc0; bc <= bc1 && !any; ++bc) any = m.tile(br, bc) != nullptr;
    if (!any) return {TileKind::Empty};
  }
  return {TileKind::Dense};
}

/// Row-major view of a dense logical region: a pointer into the payload when
/// the storage order already matches, otherwise a gathered copy in `buf`.
const double* dense_view(const Operand& op, const TileClass& cls, std::size_t r0, std::size_t r1,
                         std::size_t c0, std::size_t c1, std::vector<double>& buf,
                         std::size_t& ld) {
  if (cls.unit) {
    const bool row_major = op.m.layout() == Layout::RowMajor;
    if (row_major != op.transposed) {
      ld = row_major ? cls.unit->cols : cls.unit->rows;
      return op.m.values(*cls.unit).data();
    }
  }
  ld = c1 - c0;
  double* out = Scratch::sized(buf, (r1 - r0) * ld);
  op.m.gather(op.transposed, r0, r1, c0, c1, out, ld);
  return out;
}

/// Visits the entries of a coordinate tile in logical coordinates.
template <typename Fn>
void for_each_tile_entry(const Operand& op, const StoredBlock& blk, Fn&& fn) {
  const auto v = op.m.values(blk);
  const auto c = op.m.coords(blk);
  for (std::size_t i = 0; i < blk.count; ++i) {
    const std::size_t r = blk.row0 + c[i].row, col = blk.col0 + c[i].col;
    if (op.transposed) {
      fn(col, r, v[i]);
    } else {
      fn(r, col, v[i]);
    }
  }
}

/// acc(rows x cols, row-major, ld = c1-c0) = left[r0:r1, :] * right[:, c0:c1].
void product_region(const Operand& left, const Operand& right, std::size_t r0, std::size_t r1,
                    std::size_t c0, std::size_t c1, std::size_t kstep, double* acc) {
  const std::size_t rows = r1 - r0, cols = c1 - c0, depth = left.cols();
  std::fill_n(acc, rows * cols, 0.0);
  for (std::size_t p0 = 0; p0 < depth; p0 += kstep) {
    const std::size_t p1 = std::min(depth, p0 + kstep);
    const TileClass lc = classify(left, r0, r1, p0, p1);
    if (lc.kind == TileKind::Empty) continue;
    const TileClass rc = classify(right, p0, p1, c0, c1);
    if (rc.kind == TileKind::Empty) continue;

    if (lc.kind == TileKind::Coords) {
      std::size_t ldr = 0;
      const double* rv = dense_view(right, rc.kind == TileKind::Dense ? rc : TileClass{TileKind::Dense},
                                    p0, p1, c0, c1, scratch.right, ldr);
      for_each_tile_entry(left, *lc.unit, [&](std::size_t r, std::size_t p, double v) {
        if (r < r0 || r >= r1 || p < p0 || p >= p1) return;
        double* crow = acc + (r - r0) * cols;
        const double* rrow = rv + (p - p0) * ldr;
        for (std::size_t j = 0; j < cols; ++j) crow[j] += v * rrow[j];
      });
      continue;
    }
    std::size_t ldl = 0;
    const double* lv = dense_view(left, lc, r0, r1, p0, p1, scratch.left, ldl);
    if (rc.kind == TileKind::Coords) {
      for_each_tile_entry(right, *rc.unit, [&](std::size_t p, std::size_t c, double v) {
        if (p < p0 || p >= p1 || c < c0 || c >= c1) return;
        const double* lcol = lv + (p - p0);
        double* ccol = acc + (c - c0);
        for (std::size_t i = 0; i < rows; ++i) ccol[i * cols] += lcol[i * ldl] * v;
      });
      continue;
    }
    std::size_t ldr = 0;
    const double* rv = dense_view(right, rc, p0, p1, c0, c1, scratch.right, ldr);
    gemm_dense(rows, cols, p1 - p0, lv, ldl, rv, ldr, acc, cols);
  }
}

/// Writes the stored positions of `blk` from a row-major region buffer.
void store_unit(PackedMatrix& out, const StoredBlock& blk, const double* src, std::size_t ld) {
  auto v = out.values(blk);
  if (!blk.dense) {
    const auto c = out.coords(blk);
    for (std::size_t i = 0; i < blk.count; ++i) v[i] = src[c[i].row * ld + c[i].col];
    return;
  }
  const auto mask = out.mask(blk);
  if (out.layout() == Layout::RowMajor) {
    for (std::size_t r = 0; r < blk.rows; ++r) {
      if (mask.empty()) {
        std::copy_n(src + r * ld, blk.cols, v.data() + r * blk.cols);
      } else {
        for (std::size_t c = 0; c < blk.cols; ++c)
          if (mask[r * blk.cols + c]) v[r * blk.cols + c] = src[r * ld + c];
      }
    }
  } else {
    for (std::size_t c = 0; c < blk.cols; ++c)
      for (std::size_t r = 0; r < blk.rows; ++r)
        if (mask.empty() || mask[r * blk.cols + c]) v[c * blk.rows + r] = src[r * ld + c];
  }
}

Operand left_of(OpKind product, const PackedMatrix& a) {
  return {a, product == OpKind::TransposeMatMulLeft};
}
Operand right_of(OpKind product, const PackedMatrix& b) {
  return {b, product == OpKind::MatMulTransposeRight};
}

void check_product(OpKind product, const PackedMatrix& a, const PackedMatrix& b,
                   const PackedMatrix& out) {
  const Operand l = left_of(product, a), r = right_of(product, b);
  if (l.cols() != r.rows() || out.shape() != Shape{l.rows(), r.cols()}) {
    throw ExecError(std::string(to_string(product)) + ": operand shapes " + a.shape().str() + ", " +
                    b.shape().str() + " do not produce " + out.shape().str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

void product_block(OpKind product, const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out,
                   std::size_t unit) {
  check_product(product, a, b, out);
  const StoredBlock& blk = out.blocks()[unit];
  double* acc = Scratch::sized(scratch.acc, blk.rows * blk.cols);
  product_region(left_of(product, a), right_of(product, b), blk.row0, blk.row0 + blk.rows,
                 blk.col0, blk.col0 + blk.cols, out.block(), acc);
  store_unit(out, blk, acc, blk.cols);
}

void mult_bias_sigm_block(OpKind product, const PackedMatrix& a, const PackedMatrix& b,
                          const PackedMatrix& bias, PackedMatrix& out, std::size_t unit) {
  check_product(product, a, b, out);
  if (bias.shape() != Shape{1, out.shape().cols}) {
    throw ExecError("MultBiasSigm: bias " + bias.shape().str() + " does not match " + out.shape().str());
  }
  const StoredBlock& blk = out.blocks()[unit];
  double* acc = Scratch::sized(scratch.acc, blk.rows * blk.cols);
  product_region(left_of(product, a), right_of(product, b), blk.row0, blk.row0 + blk.rows,
                 blk.col0, blk.col0 + blk.cols, out.block(), acc);
  double* row = Scratch::sized(scratch.inputs, blk.cols);
  bias.gather(false, 0, 1, blk.col0, blk.col0 + blk.cols, row, blk.cols);
  for (std::size_t r = 0; r < blk.rows; ++r) {
    double* a_row = acc + r * blk.cols;
    for (std::size_t c = 0; c < blk.cols; ++c) a_row[c] = sigmoid(a_row[c] + row[c]);
  }
  store_unit(out, blk, acc, blk.cols);
}

void masked_matmul_block(const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out,
                         std::size_t unit) {
  check_product(OpKind::TransposeMatMulLeft, a, b, out);
  const StoredBlock& blk = out.blocks()[unit];
  const Operand left{a, true};
  const Operand right{b, false};
  const std::size_t r0 = blk.row0, r1 = blk.row0 + blk.rows;
  const std::size_t c0 = blk.col0, c1 = blk.col0 + blk.cols;

  if (blk.dense) {
    double* acc = Scratch::sized(scratch.acc, blk.rows * blk.cols);
    product_region(left, right, r0, r1, c0, c1, out.block(), acc);
    store_unit(out, blk, acc, blk.cols);
    return;
  }

  // Coordinate unit: one dot product per stored position over the shared
  // depth, streamed in depth chunks. Four independent chains at a time.
  const std::size_t depth = a.shape().rows;
  const std::size_t kstep = out.block();
  const auto coords = out.coords(blk);
  double* acc = Scratch::sized(scratch.acc, blk.count);
  std::fill_n(acc, blk.count, 0.0);
  for (std::size_t j0 = 0; j0 < depth; j0 += kstep) {
    const std::size_t j1 = std::min(depth, j0 + kstep), w = j1 - j0;
    double* at = Scratch::sized(scratch.left, blk.rows * w);   // a^T region: rows x depth chunk
    double* bt = Scratch::sized(scratch.right, blk.cols * w);  // b^T region: cols x depth chunk
    a.gather(true, r0, r1, j0, j1, at, w);
    b.gather(true, c0, c1, j0, j1, bt, w);
    std::size_t e = 0;
    for (; e + 4 <= blk.count; e += 4) {
      const double* x0 = at + coords[e].row * w;
      const double* x1 = at + coords[e + 1].row * w;
      const double* x2 = at + coords[e + 2].row * w;
      const double* x3 = at + coords[e + 3].row * w;
      const double* y0 = bt + coords[e].col * w;
      const double* y1 = bt + coords[e + 1].col * w;
      const double* y2 = bt + coords[e + 2].col * w;
      const double* y3 = bt + coords[e + 3].col * w;
      double s0 = acc[e], s1 = acc[e + 1], s2 = acc[e + 2], s3 = acc[e + 3];
      for (std::size_t j = 0; j < w; ++j) {
        s0 += x0[j] * y0[j];
        s1 += x1[j] * y1[j];
        s2 += x2[j] * y2[j];
        s3 += x3[j] * y3[j];
      }
      acc[e] = s0;
      acc[e + 1] = s1;
      acc[e + 2] = s2;
      acc[e + 3] = s3;
    }
    for (; e < blk.count; ++e) {
      const double* x = at + coords[e].row * w;
      const double* y = bt + coords[e].col * w;
      double s = acc[e];
      for (std::size_t j = 0; j < w; ++j) s += x[j] * y[j];
      acc[e] = s;
    }
  }
  std::copy_n(acc, blk.count, out.values(blk).data());
}

void product(OpKind kind, const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out) {
  for (std::size_t u = 0; u < out.blocks().size(); ++u) product_block(kind, a, b, out, u);
}

void masked_matmul(const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out) {
  for (std::size_t u = 0; u < out.blocks().size(); ++u) masked_matmul_block(a, b, out, u);
}

// ---------------------------------------------------------------------------
// Elementwise programs
// ---------------------------------------------------------------------------

namespace {

struct Stream {
  const double* data;
  std::size_t stride;  // 0 broadcasts a scalar

  double operator[](std::size_t i) const { return data[i * stride]; }
};

template <typename F>
void map1(F f, Stream x, double* out, std::size_t n) {
  if (x.stride == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x.data[i]);
  } else {
    const double v = f(x.data[0]);
    std::fill_n(out, n, v);
  }
}

template <typename F>
void map2(F f, Stream x, Stream y, double* out, std::size_t n) {
  if (x.stride == 1 && y.stride == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x.data[i], y.data[i]);
  } else if (x.stride == 1) {
    const double b = y.data[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x.data[i], b);
  } else if (y.stride == 1) {
    const double a = x.data[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = f(a, y.data[i]);
  } else {
    std::fill_n(out, n, f(x.data[0], y.data[0]));
  }
}

void run_instr(const ElemInstr& ins, Stream x, Stream y, double* out, std::size_t n) {
  switch (ins.op) {
    case OpKind::Add:
      return map2([](double a, double b) { return a + b; }, x, y, out, n);
    case OpKind::Sub:
      return map2([](double a, double b) { return a - b; }, x, y, out, n);
    case OpKind::MulElem:
    case OpKind::ScaleByScalar:
      return map2([](double a, double b) { return a * b; }, x, y, out, n);
    case OpKind::Square:
      return map1([](double a) { return a * a; }, x, out, n);
    case OpKind::Abs:
      return map1([](double a) { return std::abs(a); }, x, out, n);
    case OpKind::Sigmoid:
      return map1([](double a) { return sigmoid(a); }, x, out, n);
    case OpKind::SoftShrink: {
      const double theta = ins.theta;
      return map1([theta](double a) { return soft_shrink(a, theta); }, x, out, n);
    }
    default:
      throw ExecError("elementwise program holds " + std::string(to_string(ins.op)));
  }
}

/// Evaluates the program over n elements; returns the last temp.
const double* run_program(std::span<const ElemInstr> program, std::span<const Stream> inputs,
                          std::size_t n) {
  double* temps = Scratch::sized(scratch.temps, program.size() * n);
  for (std::size_t i = 0; i < program.size(); ++i) {
    const ElemInstr& ins = program[i];
    Stream args[2] = {{nullptr, 0}, {nullptr, 0}};
    for (std::size_t a = 0; a < ins.args.size() && a < 2; ++a) {
      const ElemOperand& op = ins.args[a];
      if (op.source == ElemOperand::Source::Input) {
        args[a] = inputs[op.index];
      } else {
        // Temps of broadcast-only instructions are materialized at full width.
        args[a] = {temps + op.index * n, 1};
      }
    }
    run_instr(ins, args[0], args[1], temps + i * n, n);
  }
  return temps + (program.size() - 1) * n;
}

}  // namespace

void elem_program_block(std::span<const ElemInstr> program,
                        std::span<const PackedMatrix* const> inputs, PackedMatrix& out,
                        std::size_t unit, bool flat) {
  if (program.empty()) throw ExecError("empty elementwise program");
  const StoredBlock& blk = out.blocks()[unit];
  std::vector<Stream> streams(inputs.size());

  if (flat) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const PackedMatrix& in = *inputs[i];
      if (in.shape().is_scalar() && !out.shape().is_scalar()) {
        streams[i] = {in.values().data(), 0};
      } else {
        streams[i] = {in.values(in.blocks()[unit]).data(), 1};
      }
    }
    const double* result = run_program(program, streams, blk.count);
    double* dst = out.values(blk).data();
    if (!blk.masked) {
      std::copy_n(result, blk.count, dst);
      return;
    }
    // Padding of a partially filled tile is never written.
    const auto mask = out.mask(blk);
    const bool col = out.decision().layout == Layout::ColMajor;
    for (std::size_t r = 0; r < blk.rows; ++r)
      for (std::size_t c = 0; c < blk.cols; ++c) {
        const std::size_t i = col ? c * blk.rows + r : r * blk.cols + c;
        if (mask[r * blk.cols + c]) dst[i] = result[i];
      }
    return;
  }

  const std::size_t r0 = blk.row0, c0 = blk.col0, n = blk.rows * blk.cols;
  std::size_t matrices = 0;
  for (const PackedMatrix* in : inputs)
    if (!in->shape().is_scalar() || out.shape().is_scalar()) ++matrices;
  double* buf = Scratch::sized(scratch.inputs, matrices * n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const PackedMatrix& in = *inputs[i];
    if (in.shape().is_scalar() && !out.shape().is_scalar()) {
      streams[i] = {in.values().data(), 0};
      continue;
    }
    double* dst = buf + next * n;
    ++next;
    in.gather(false, r0, r0 + blk.rows, c0, c0 + blk.cols, dst, blk.cols);
    streams[i] = {dst, 1};
  }
  const double* result = run_program(program, streams, n);
  store_unit(out, blk, result, blk.cols);
}

// ---------------------------------------------------------------------------
// Row broadcast, transpose, reductions
// ---------------------------------------------------------------------------

void bias_add_row_block(const PackedMatrix& x, const PackedMatrix& bias, PackedMatrix& out,
                        std::size_t unit) {
  const StoredBlock& blk = out.blocks()[unit];
  double* acc = Scratch::sized(scratch.acc, blk.rows * blk.cols);
  x.gather(false, blk.row0, blk.row0 + blk.rows, blk.col0, blk.col0 + blk.cols, acc, blk.cols);
  double* row = Scratch::sized(scratch.inputs, blk.cols);
  bias.gather(false, 0, 1, blk.col0, blk.col0 + blk.cols, row, blk.cols);
  for (std::size_t r = 0; r < blk.rows; ++r)
    for (std::size_t c = 0; c < blk.cols; ++c) acc[r * blk.cols + c] += row[c];
  store_unit(out, blk, acc, blk.cols);
}

void transpose_block(const PackedMatrix& x, PackedMatrix& out, std::size_t unit) {
  const StoredBlock& blk = out.blocks()[unit];
  double* acc = Scratch::sized(scratch.acc, blk.rows * blk.cols);
  x.gather(true, blk.row0, blk.row0 + blk.rows, blk.col0, blk.col0 + blk.cols, acc, blk.cols);
  store_unit(out, blk, acc, blk.cols);
}

void sum_rows_block(const PackedMatrix& x, PackedMatrix& out, std::size_t unit) {
  const StoredBlock& blk = out.blocks()[unit];
  const std::size_t c0 = blk.col0, w = blk.cols, rows = x.shape().rows;
  const std::size_t strip = std::max<std::size_t>(x.block(), 1);
  double* acc = Scratch::sized(scratch.acc, w);
  std::fill_n(acc, w, 0.0);
  double* buf = Scratch::sized(scratch.left, strip * w);
  for (std::size_t r0 = 0; r0 < rows; r0 += strip) {
    const std::size_t r1 = std::min(rows, r0 + strip);
    x.gather(false, r0, r1, c0, c0 + w, buf, w);
    for (std::size_t r = 0; r < r1 - r0; ++r)
      for (std::size_t c = 0; c < w; ++c) acc[c] += buf[r * w + c];
  }
  store_unit(out, blk, acc, w);
}

namespace {

template <typename F>
double row_major_total(const PackedMatrix& x, F&& term_rows) {
  const std::size_t rows = x.shape().rows, cols = x.shape().cols;
  const std::size_t strip = std::max<std::size_t>(1, std::min(rows, (1u << 16) / cols + 1));
  double total = 0.0;
  for (std::size_t r0 = 0; r0 < rows; r0 += strip) {
    const std::size_t r1 = std::min(rows, r0 + strip);
    total = term_rows(r0, r1, cols, total);
  }
  return total;
}

}  // namespace

void sum_all(const PackedMatrix& x, PackedMatrix& out) {
  if (!out.shape().is_scalar()) throw ExecError("SumAll output must be 1x1");
  const double total = row_major_total(x, [&](std::size_t r0, std::size_t r1, std::size_t cols, double t) {
    double* buf = Scratch::sized(scratch.left, (r1 - r0) * cols);
    x.gather(false, r0, r1, 0, cols, buf, cols);
    for (std::size_t i = 0; i < (r1 - r0) * cols; ++i) t += buf[i];
    return t;
  });
  out.values()[0] = total;
}

void sub_sq_sum(const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out) {
  if (!out.shape().is_scalar()) throw ExecError("SubSqSum output must be 1x1");
  if (a.shape() != b.shape()) throw ExecError("SubSqSum operands differ in shape");
  const double total = row_major_total(a, [&](std::size_t r0, std::size_t r1, std::size_t cols, double t) {
    const std::size_t n = (r1 - r0) * cols;
    double* x = Scratch::sized(scratch.left, n);
    double* y = Scratch::sized(scratch.right, n);
    a.gather(false, r0, r1, 0, cols, x, cols);
    b.gather(false, r0, r1, 0, cols, y, cols);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = x[i] - y[i];
      const double sq = d * d;
      t += sq;
    }
    return t;
  });
  out.values()[0] = total;
}

}  // namespace nnc::kernels
