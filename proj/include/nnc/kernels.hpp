// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Numerical kernels. Each writes exactly one stored unit of its output (the
// unit index is the task's write region) and reads its inputs only, so any
// number may run concurrently on distinct units.

#pragma once

#include <cstddef>
#include <span>

#include "nnc/graph.hpp"
#include "nnc/storage.hpp"

namespace nnc::kernels {

/// Logistic function, evaluated on the branch that cannot overflow.
double sigmoid(double x);
/// sign(x) * max(|x| - theta, 0)
double soft_shrink(double x, double theta);
/// One elementwise op on scalars; `b` is ignored by unary ops.
double apply(OpKind op, double a, double b, double theta);

/// out = op(a) * op(b) on one unit of out. `product` selects which operand is
/// read transposed (MatMul, TransposeMatMulLeft, MatMulTransposeRight).
/// Partial sums accumulate over k in ascending order.
void product_block(OpKind product, const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out,
                   std::size_t unit);

/// out = sigmoid(op(a) * op(b) + bias), epilogue applied to the unit while it
/// is still in the accumulation buffer.
void mult_bias_sigm_block(OpKind product, const PackedMatrix& a, const PackedMatrix& b,
                          const PackedMatrix& bias, PackedMatrix& out, std::size_t unit);

/// out[r,c] = sum_j a[j,r] * b[j,c] at the stored positions of `out` only.
void masked_matmul_block(const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out,
                         std::size_t unit);

/// Runs an elementwise program over one unit. 1x1 inputs broadcast. `flat`
/// asserts that every non-scalar input has the structure of `out`, which
/// allows a straight pass over the unit's stored values.
void elem_program_block(std::span<const ElemInstr> program,
                        std::span<const PackedMatrix* const> inputs, PackedMatrix& out,
                        std::size_t unit, bool flat);

void bias_add_row_block(const PackedMatrix& x, const PackedMatrix& bias, PackedMatrix& out,
                        std::size_t unit);
void transpose_block(const PackedMatrix& x, PackedMatrix& out, std::size_t unit);
/// Column sums for the columns of one unit of the 1 x n output.
void sum_rows_block(const PackedMatrix& x, PackedMatrix& out, std::size_t unit);
/// Row-major total into a 1x1 output.
void sum_all(const PackedMatrix& x, PackedMatrix& out);
/// sum (a - b)^2 into a 1x1 output.
void sub_sq_sum(const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out);

/// Row-major dense C(m x n) += A(m x k) * B(k x n), ascending k per element.
void gemm_dense(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                const double* b, std::size_t ldb, double* c, std::size_t ldc);

// Whole-matrix conveniences over the per-unit kernels.
void product(OpKind product, const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out);
void masked_matmul(const PackedMatrix& a, const PackedMatrix& b, PackedMatrix& out);

}  // namespace nnc::kernels
