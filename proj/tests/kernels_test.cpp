// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "nnc/kernels.hpp"
#include "support/generators.hpp"
#include "support/oracle.hpp"

namespace nnc {
namespace {

using testing::masked;
using testing::random_matrix;

constexpr double kTol = 1e-12;

PackedMatrix pack_as(const Matrix& m, const SparsityPattern& p, Format f, std::size_t b,
                     Layout l = Layout::RowMajor) {
  return PackedMatrix::pack(m, p, {"v", f, b, l});
}

PackedMatrix dense(const Matrix& m, std::size_t b, Layout l = Layout::RowMajor) {
  return pack_as(m, SparsityPattern::dense(), Format::DenseBlocked, b, l);
}

PackedMatrix dense_out(Shape s, std::size_t b, Layout l = Layout::RowMajor) {
  return PackedMatrix(s, SparsityPattern::dense(), {"out", Format::DenseBlocked, b, l});
}

// --------------------------------------------------------------------------
// Dense products
// --------------------------------------------------------------------------

TEST(GemmTest, identity_left_is_exact) {
  std::mt19937_64 rng(1);
  const Matrix b = random_matrix({4, 4}, rng);
  auto out = dense_out({4, 4}, 2);
  kernels::product(OpKind::MatMul, dense(Matrix::identity(4), 2), dense(b, 2), out);
  EXPECT_EQ(out.unpack(), b);
}

TEST(GemmTest, hand_computed_two_by_two) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{5, 6}, {7, 8}});
  for (std::size_t blk : {1, 2, 64}) {
    auto out = dense_out({2, 2}, blk);
    kernels::product(OpKind::MatMul, dense(a, blk), dense(b, blk), out);
    EXPECT_EQ(out.unpack(), Matrix::from_rows({{19, 22}, {43, 50}}));
  }
}

TEST(GemmTest, block_larger_than_matrix_equals_unblocked) {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix({5, 7}, rng), b = random_matrix({7, 3}, rng);
  auto big = dense_out({5, 3}, 64);
  kernels::product(OpKind::MatMul, dense(a, 64), dense(b, 64), big);
  EXPECT_LE(relative_difference(big.unpack(), oracle::matmul(a, b)), kTol);
}

TEST(GemmTest, raw_dense_kernel_matches_oracle) {
  std::mt19937_64 rng(3);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {4, 16, 5}, {9, 33, 17}, {32, 32, 32}, {7, 3, 40}}) {
    const Matrix a = random_matrix({std::size_t(m), std::size_t(k)}, rng);
    const Matrix b = random_matrix({std::size_t(k), std::size_t(n)}, rng);
    Matrix c(m, n);
    kernels::gemm_dense(m, n, k, a.values().data(), k, b.values().data(), n, c.values().data(), n);
    EXPECT_LE(relative_difference(c, oracle::matmul(a, b)), kTol);
  }
}

// --------------------------------------------------------------------------
// Products over every format pairing
// --------------------------------------------------------------------------

struct Operand {
  const char* name;
  SparsityPattern pattern;
  Format format;
};

std::vector<Operand> operand_kinds(Shape s, std::mt19937_64& rng) {
  return {
      {"dense", SparsityPattern::dense(), Format::DenseBlocked},
      {"lrf16", testing::field_pattern(s, 16), Format::LocallyDense},
      {"lrf4", testing::checker_fields(s, 4), Format::GeneralSparseCSB},
      {"coords10", testing::random_coords(s, 0.1, rng), Format::GeneralSparseCSB},
      {"coords60", testing::random_coords(s, 0.6, rng), Format::HybridCSB},
  };
}

Matrix product_oracle(OpKind kind, const Matrix& a, const Matrix& b) {
  switch (kind) {
    case OpKind::TransposeMatMulLeft:
      return oracle::matmul(oracle::transpose(a), b);
    case OpKind::MatMulTransposeRight:
      return oracle::matmul(a, oracle::transpose(b));
    default:
      return oracle::matmul(a, b);
  }
}

TEST(ProductPropertyTest, every_format_and_block_size_matches_oracle) {
  std::mt19937_64 rng(17);
  const std::size_t m = 19, k = 24, n = 21;
  for (OpKind kind : {OpKind::MatMul, OpKind::TransposeMatMulLeft, OpKind::MatMulTransposeRight}) {
    const Shape as = kind == OpKind::TransposeMatMulLeft ? Shape{k, m} : Shape{m, k};
    const Shape bs = kind == OpKind::MatMulTransposeRight ? Shape{n, k} : Shape{k, n};
    const auto a_kinds = operand_kinds(as, rng);
    const auto b_kinds = operand_kinds(bs, rng);
    for (const auto& ak : a_kinds) {
      for (const auto& bk : b_kinds) {
        const Matrix a = masked(random_matrix(as, rng), ak.pattern);
        const Matrix b = masked(random_matrix(bs, rng), bk.pattern);
        const Matrix expected = product_oracle(kind, a, b);
        for (std::size_t blk : {1, 2, 3, 7, 8, 64}) {
          for (Layout la : {Layout::RowMajor, Layout::ColMajor}) {
            SCOPED_TRACE(std::string(to_string(kind)) + " " + ak.name + " x " + bk.name +
                         " b=" + std::to_string(blk) + " " + std::string(to_string(la)));
            const Layout lb = la == Layout::RowMajor ? Layout::ColMajor : Layout::RowMajor;
            auto pa = pack_as(a, ak.pattern, ak.format, blk, la);
            auto pb = pack_as(b, bk.pattern, bk.format, blk, lb);
            auto out = dense_out(expected.shape(), blk, la);
            kernels::product(kind, pa, pb, out);
            ASSERT_LE(relative_difference(out.unpack(), expected), kTol);
          }
        }
      }
    }
  }
}

TEST(ProductTest, locally_dense_cases) {
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix({6, 8}, rng);
  // One field covering the whole weight equals the dense product.
  const Matrix w = random_matrix({8, 8}, rng);
  auto whole = SparsityPattern::block_list({{0, 0, 8, 8}});
  auto out = dense_out({6, 8}, 3);
  kernels::product(OpKind::MatMul, dense(x, 3), pack_as(w, whole, Format::LocallyDense, 3), out);
  auto ref = dense_out({6, 8}, 3);
  kernels::product(OpKind::MatMul, dense(x, 3), dense(w, 3), ref);
  EXPECT_EQ(out.unpack(), ref.unpack());

  // Two diagonal fields give a block-diagonal product.
  auto diag = SparsityPattern::block_list({{0, 0, 4, 4}, {4, 4, 4, 4}});
  kernels::product(OpKind::MatMul, dense(x, 3), pack_as(w, diag, Format::LocallyDense, 3), out);
  EXPECT_LE(relative_difference(out.unpack(), oracle::matmul(x, masked(w, diag))), kTol);

  // No fields: the product is zero.
  auto none = SparsityPattern::block_list({});
  kernels::product(OpKind::MatMul, dense(x, 3), pack_as(w, none, Format::LocallyDense, 3), out);
  EXPECT_EQ(out.unpack(), Matrix(6, 8));
}

TEST(ProductTest, csb_cases) {
  std::mt19937_64 rng(6);
  const Matrix x = random_matrix({8, 8}, rng);
  std::vector<Coord> diag;
  Matrix d(8, 8);
  for (std::size_t i = 0; i < 8; ++i) {
    diag.push_back({i, i});
    d(i, i) = static_cast<double>(i + 1);
  }
  auto p = SparsityPattern::coords(diag);
  auto out = dense_out({8, 8}, 4);
  // Diagonal on the left scales rows.
  kernels::product(OpKind::MatMul, pack_as(d, p, Format::GeneralSparseCSB, 4), dense(x, 4), out);
  const Matrix got = out.unpack();
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(got(r, c), (r + 1) * x(r, c));

  // Empty pattern.
  kernels::product(OpKind::MatMul, pack_as(d, SparsityPattern::block_list({}),
                                           Format::GeneralSparseCSB, 4),
                   dense(x, 4), out);
  EXPECT_EQ(out.unpack(), Matrix(8, 8));

  // Hybrid with one dense tile and one coordinate tile.
  auto hp = SparsityPattern::coords({{0, 0}, {0, 1}, {1, 0}, {1, 1}, {6, 7}});
  const Matrix h = masked(random_matrix({8, 8}, rng), hp);
  auto ph = pack_as(h, hp, Format::HybridCSB, 2);
  ASSERT_EQ(ph.blocks().size(), 2u);
  EXPECT_TRUE(ph.blocks()[0].dense);
  EXPECT_FALSE(ph.blocks()[1].dense);
  auto out2 = dense_out({8, 8}, 2);
  kernels::product(OpKind::MatMul, dense(x, 2), ph, out2);
  EXPECT_LE(relative_difference(out2.unpack(), oracle::matmul(x, h)), kTol);
}

TEST(ProductTest, deterministic_across_calls) {
  std::mt19937_64 rng(8);
  const Matrix a = random_matrix({30, 20}, rng), b = random_matrix({20, 25}, rng);
  auto o1 = dense_out({30, 25}, 8), o2 = dense_out({30, 25}, 8);
  kernels::product(OpKind::MatMul, dense(a, 8), dense(b, 8), o1);
  kernels::product(OpKind::MatMul, dense(a, 8), dense(b, 8), o2);
  EXPECT_EQ(o1.unpack(), o2.unpack());
}

TEST(ProductTest, shape_mismatch_throws) {
  auto out = dense_out({2, 2}, 2);
  EXPECT_THROW(kernels::product(OpKind::MatMul, dense(Matrix(2, 3), 2), dense(Matrix(2, 2), 2), out),
               ExecError);
}

// --------------------------------------------------------------------------
// Masked products
// --------------------------------------------------------------------------

TEST(MaskedMatMulTest, full_pattern_equals_transposed_product) {
  std::mt19937_64 rng(9);
  const Matrix a = random_matrix({10, 6}, rng), b = random_matrix({10, 7}, rng);
  auto out = dense_out({6, 7}, 4);
  kernels::masked_matmul(dense(a, 4), dense(b, 4), out);
  EXPECT_LE(relative_difference(out.unpack(), oracle::matmul(oracle::transpose(a), b)), kTol);
}

TEST(MaskedMatMulTest, empty_pattern_is_noop) {
  PackedMatrix out(Shape{6, 7}, SparsityPattern::block_list({}), {"o", Format::GeneralSparseCSB, 4});
  kernels::masked_matmul(dense(Matrix(10, 6, 1.0), 4), dense(Matrix(10, 7, 1.0), 4), out);
  EXPECT_TRUE(out.values().empty());
  EXPECT_EQ(out.unpack(), Matrix(6, 7));
}

TEST(MaskedMatMulTest, ten_coordinates_match_masked_oracle) {
  std::mt19937_64 rng(10);
  const Matrix a = random_matrix({12, 8}, rng), b = random_matrix({12, 8}, rng);
  auto p = SparsityPattern::coords({{0, 0}, {0, 7}, {1, 3}, {2, 2}, {3, 5}, {4, 1}, {5, 6}, {6, 0},
                                    {7, 4}, {7, 7}});
  const Matrix expected = masked(oracle::matmul(oracle::transpose(a), b), p);
  for (std::size_t blk : {1, 3, 8}) {
    PackedMatrix out(Shape{8, 8}, p, {"o", Format::GeneralSparseCSB, blk});
    kernels::masked_matmul(dense(a, blk), dense(b, blk), out);
    EXPECT_LE(relative_difference(out.unpack(), expected), kTol);
  }
}

TEST(MaskedMatMulPropertyTest, formats_and_blocks) {
  std::mt19937_64 rng(12);
  const Shape ws{20, 18};
  const std::vector<std::pair<SparsityPattern, Format>> outs = {
      {testing::random_coords(ws, 0.1, rng), Format::GeneralSparseCSB},
      {testing::random_coords(ws, 0.7, rng), Format::HybridCSB},
      {testing::field_pattern(ws, 6), Format::LocallyDense},
      {testing::checker_fields(ws, 4), Format::GeneralSparseCSB},
  };
  const Matrix a = random_matrix({15, 20}, rng), b = random_matrix({15, 18}, rng);
  for (const auto& [pattern, format] : outs) {
    const Matrix expected = masked(oracle::matmul(oracle::transpose(a), b), pattern);
    for (std::size_t blk : {1, 2, 3, 7, 8, 64}) {
      for (Layout l : {Layout::RowMajor, Layout::ColMajor}) {
        PackedMatrix out(ws, pattern, {"o", format, blk, l});
        kernels::masked_matmul(dense(a, blk, l), dense(b, blk), out);
        ASSERT_LE(relative_difference(out.unpack(), expected), kTol) << blk;
      }
    }
  }
}

TEST(MaskedMatMulTest, never_writes_hybrid_padding) {
  // Tile (0,0) of b=4 is a masked dense tile: 12 of 16 positions.
  std::vector<Coord> coords;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) coords.push_back({r, c});
  auto p = SparsityPattern::coords(coords);
  PackedMatrix out(Shape{4, 4}, p, {"o", Format::HybridCSB, 4});
  ASSERT_TRUE(out.blocks()[0].masked);
  const double sentinel = -12345.0;
  auto mask = out.mask(out.blocks()[0]);
  auto vals = out.values();
  for (std::size_t i = 0; i < vals.size(); ++i)
    if (!mask[i]) vals[i] = sentinel;
  std::mt19937_64 rng(13);
  const Matrix a = random_matrix({5, 4}, rng), b = random_matrix({5, 4}, rng);
  kernels::masked_matmul(dense(a, 4), dense(b, 4), out);
  std::size_t untouched = 0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (mask[i]) {
      EXPECT_NE(vals[i], sentinel);
    } else {
      EXPECT_EQ(vals[i], sentinel);
      ++untouched;
    }
  }
  EXPECT_EQ(untouched, 4u);
}

// --------------------------------------------------------------------------
// Fused product epilogue
// --------------------------------------------------------------------------

TEST(MultBiasSigmTest, zero_input_gives_half) {
  std::mt19937_64 rng(14);
  auto out = dense_out({4, 5}, 2);
  kernels::product(OpKind::MatMul, dense(Matrix(4, 3), 2), dense(random_matrix({3, 5}, rng), 2), out);
  for (std::size_t u = 0; u < out.blocks().size(); ++u) {
    kernels::mult_bias_sigm_block(OpKind::MatMul, dense(Matrix(4, 3), 2),
                                  dense(random_matrix({3, 5}, rng), 2), dense(Matrix(1, 5), 2), out, u);
  }
  EXPECT_EQ(out.unpack(), Matrix(4, 5, 0.5));
}

TEST(MultBiasSigmTest, bias_cancelling_diagonal_product) {
  // Columns of V are constant, W is diagonal, so V*W has constant columns and
  // bias = -(V*W) row cancels it exactly.
  Matrix v(4, 4), w(4, 4), bias(1, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    w(c, c) = 0.5 * static_cast<double>(c + 1);
    for (std::size_t r = 0; r < 4; ++r) v(r, c) = static_cast<double>(c) - 1.5;
    bias(0, c) = -(v(0, c) * w(c, c));
  }
  auto out = dense_out({4, 4}, 2);
  for (std::size_t u = 0; u < out.blocks().size(); ++u)
    kernels::mult_bias_sigm_block(OpKind::MatMul, dense(v, 2), dense(w, 2), dense(bias, 2), out, u);
  EXPECT_EQ(out.unpack(), Matrix(4, 4, 0.5));
}

TEST(MultBiasSigmTest, matches_unfused_oracle_and_stays_in_unit_interval) {
  std::mt19937_64 rng(15);
  const Matrix v = random_matrix({16, 8}, rng, -3, 3), w = random_matrix({8, 8}, rng, -3, 3);
  const Matrix bias = random_matrix({1, 8}, rng);
  const Matrix expected = oracle::map(oracle::add_row(oracle::matmul(v, w), bias), oracle::logistic);
  for (std::size_t blk : {1, 3, 8, 64}) {
    auto out = dense_out({16, 8}, blk);
    for (std::size_t u = 0; u < out.blocks().size(); ++u)
      kernels::mult_bias_sigm_block(OpKind::MatMul, dense(v, blk), dense(w, blk), dense(bias, blk),
                                    out, u);
    const Matrix got = out.unpack();
    EXPECT_LE(relative_difference(got, expected), kTol);
    for (double x : got.values()) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  }
}

TEST(SigmoidTest, stable_at_extremes) {
  EXPECT_EQ(kernels::sigmoid(0.0), 0.5);
  EXPECT_EQ(kernels::sigmoid(-1000.0), 0.0);
  EXPECT_EQ(kernels::sigmoid(1000.0), 1.0);
  EXPECT_FALSE(std::isnan(kernels::sigmoid(-800.0)));
}

// --------------------------------------------------------------------------
// Elementwise programs
// --------------------------------------------------------------------------

ElemInstr instr(OpKind op, std::vector<ElemOperand> args, double theta = 0.0) {
  return {op, std::move(args), theta};
}
ElemOperand in(std::size_t i) { return {ElemOperand::Source::Input, i}; }
ElemOperand tmp(std::size_t i) { return {ElemOperand::Source::Temp, i}; }

Matrix run_program(const std::vector<ElemInstr>& prog, const std::vector<const PackedMatrix*>& ins,
                   PackedMatrix out, bool flat) {
  for (std::size_t u = 0; u < out.blocks().size(); ++u)
    kernels::elem_program_block(prog, ins, out, u, flat);
  return out.unpack();
}

TEST(ElemProgramTest, soft_shrink_examples) {
  const Matrix x = Matrix::from_rows({{-2, -0.5, 0, 0.5, 2}});
  auto px = dense(x, 2);
  std::vector<const PackedMatrix*> ins{&px};
  EXPECT_EQ(run_program({instr(OpKind::SoftShrink, {in(0)}, 0.0)}, ins, dense_out({1, 5}, 2), true), x);
  EXPECT_EQ(run_program({instr(OpKind::SoftShrink, {in(0)}, 1.0)}, ins, dense_out({1, 5}, 2), true),
            Matrix::from_rows({{-1, 0, 0, 0, 1}}));
}

TEST(ElemProgramTest, delta_chain_vanishes_when_output_matches_target) {
  // (H - T) .* H .* (1 - H) with H = T.
  std::mt19937_64 rng(16);
  const Matrix h = random_matrix({6, 5}, rng, 0, 1);
  auto ph = dense(h, 4), pt = dense(h, 4), one = dense(Matrix(1, 1, 1.0), 4);
  std::vector<ElemInstr> prog = {
      instr(OpKind::Sub, {in(0), in(1)}), instr(OpKind::MulElem, {tmp(0), in(0)}),
      instr(OpKind::Sub, {in(2), in(0)}), instr(OpKind::MulElem, {tmp(1), tmp(2)})};
  std::vector<const PackedMatrix*> ins{&ph, &pt, &one};
  EXPECT_EQ(run_program(prog, ins, dense_out({6, 5}, 4), true), Matrix(6, 5));
}

TEST(ElemProgramPropertyTest, matches_op_by_op_oracle_on_every_path) {
  std::mt19937_64 rng(18);
  const Shape s{13, 11};
  const Matrix x = random_matrix(s, rng, -2, 2), y = random_matrix(s, rng, -2, 2);
  const double k = 0.37, theta = 0.4;
  std::vector<ElemInstr> prog = {
      instr(OpKind::Sub, {in(0), in(1)}),          instr(OpKind::Square, {tmp(0)}),
      instr(OpKind::ScaleByScalar, {in(2), tmp(1)}), instr(OpKind::Add, {tmp(2), in(0)}),
      instr(OpKind::SoftShrink, {tmp(3)}, theta),  instr(OpKind::Abs, {tmp(4)}),
      instr(OpKind::MulElem, {tmp(5), in(1)}),     instr(OpKind::Sigmoid, {tmp(6)})};
  Matrix expected(s);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) {
      const double d = x(r, c) - y(r, c);
      const double t = oracle::shrink(k * (d * d) + x(r, c), theta);
      expected(r, c) = oracle::logistic(std::fabs(t) * y(r, c));
    }
  const Matrix kk(1, 1, k);
  for (std::size_t blk : {1, 2, 3, 7, 8, 64}) {
    auto px = dense(x, blk), py = dense(y, blk), pk = dense(kk, blk);
    std::vector<const PackedMatrix*> ins{&px, &py, &pk};
    EXPECT_LE(relative_difference(run_program(prog, ins, dense_out(s, blk), true), expected), kTol);
    auto pyc = dense(y, blk, Layout::ColMajor);
    std::vector<const PackedMatrix*> mixed{&px, &pyc, &pk};
    EXPECT_LE(relative_difference(run_program(prog, mixed, dense_out(s, blk), false), expected), kTol);
  }
}

TEST(ElemProgramPropertyTest, sparse_outputs_keep_pattern) {
  std::mt19937_64 rng(19);
  const Shape s{16, 12};
  for (auto [pattern, format] : std::vector<std::pair<SparsityPattern, Format>>{
           {testing::random_coords(s, 0.1, rng), Format::GeneralSparseCSB},
           {testing::random_coords(s, 0.8, rng), Format::HybridCSB},
           {testing::field_pattern(s, 6), Format::LocallyDense}}) {
    const Matrix w = masked(random_matrix(s, rng), pattern), g = masked(random_matrix(s, rng), pattern);
    const double lr = 0.1;
    std::vector<ElemInstr> prog = {instr(OpKind::ScaleByScalar, {in(2), in(1)}),
                                   instr(OpKind::Sub, {in(0), tmp(0)})};
    const Matrix expected = oracle::zip(w, g, [&](double a, double b) { return a - lr * b; });
    for (std::size_t blk : {2, 5, 64}) {
      const StorageDecision d{"w", format, blk, Layout::RowMajor};
      auto pw = PackedMatrix::pack(w, pattern, d), pg = PackedMatrix::pack(g, pattern, d);
      auto plr = dense(Matrix(1, 1, lr), blk);
      std::vector<const PackedMatrix*> ins{&pw, &pg, &plr};
      for (bool flat : {true, false}) {
        const Matrix got = run_program(prog, ins, PackedMatrix(s, pattern, d), flat);
        EXPECT_LE(relative_difference(got, expected), kTol);
        EXPECT_EQ(got, masked(got, pattern));
      }
    }
  }
}

TEST(ShrinkPropertyTest, contraction_and_sign) {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> dist(-5, 5), th(0, 3);
  for (int i = 0; i < 10000; ++i) {
    const double x = dist(rng), t = th(rng);
    const double y = kernels::soft_shrink(x, t);
    EXPECT_LE(std::fabs(y), std::fabs(x));
    EXPECT_GE(y * x, 0.0);
    EXPECT_EQ(y, oracle::shrink(x, t));
  }
}

// --------------------------------------------------------------------------
// Reductions and the rest
// --------------------------------------------------------------------------

TEST(ReduceTest, hand_examples) {
  auto out = dense_out({1, 1}, 2);
  kernels::sum_all(dense(Matrix::identity(4), 2), out);
  EXPECT_EQ(out.values()[0], 4.0);

  auto rows = dense_out({1, 2}, 1);
  const auto x = dense(Matrix::from_rows({{1, 2}, {3, 4}}), 1);
  for (std::size_t u = 0; u < rows.blocks().size(); ++u) kernels::sum_rows_block(x, rows, u);
  EXPECT_EQ(rows.unpack(), Matrix::from_rows({{4, 6}}));

  std::mt19937_64 rng(21);
  const auto t = dense(random_matrix({5, 5}, rng), 2);
  kernels::sub_sq_sum(t, t, out);
  EXPECT_EQ(out.values()[0], 0.0);
}

TEST(ReducePropertyTest, match_oracle_over_formats) {
  std::mt19937_64 rng(22);
  const Shape s{23, 17};
  for (const auto& op : operand_kinds(s, rng)) {
    const Matrix x = masked(random_matrix(s, rng), op.pattern);
    const Matrix y = random_matrix(s, rng);
    for (std::size_t blk : {1, 3, 8, 64}) {
      auto px = pack_as(x, op.pattern, op.format, blk, Layout::ColMajor);
      auto total = dense_out({1, 1}, blk);
      kernels::sum_all(px, total);
      EXPECT_NEAR(total.values()[0], oracle::total(x), 1e-12 * (1 + std::fabs(oracle::total(x))));

      auto cols = dense_out({1, s.cols}, blk);
      for (std::size_t u = 0; u < cols.blocks().size(); ++u) kernels::sum_rows_block(px, cols, u);
      EXPECT_LE(relative_difference(cols.unpack(), oracle::column_sums(x)), kTol);

      kernels::sub_sq_sum(px, dense(y, blk), total);
      const double ssq = oracle::total(oracle::zip(x, y, [](double a, double b) { return (a - b) * (a - b); }));
      EXPECT_NEAR(total.values()[0], ssq, 1e-12 * ssq);

      auto tr = dense_out({s.cols, s.rows}, blk);
      for (std::size_t u = 0; u < tr.blocks().size(); ++u) kernels::transpose_block(px, tr, u);
      EXPECT_EQ(tr.unpack(), oracle::transpose(x));
    }
  }
}

TEST(BiasAddRowTest, broadcasts_over_rows) {
  std::mt19937_64 rng(23);
  const Matrix x = random_matrix({9, 7}, rng), bias = random_matrix({1, 7}, rng);
  for (std::size_t blk : {1, 4, 64}) {
    auto out = dense_out({9, 7}, blk, Layout::ColMajor);
    for (std::size_t u = 0; u < out.blocks().size(); ++u)
      kernels::bias_add_row_block(dense(x, blk), dense(bias, blk), out, u);
    EXPECT_EQ(out.unpack(), oracle::add_row(x, bias));
  }
}

}  // namespace
}  // namespace nnc
