// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0

#include "nnc/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace nnc {

std::string_view to_string(SparsityKind kind) {
  switch (kind) {
    case SparsityKind::Dense:
      return "dense";
    case SparsityKind::Lrf:
      return "lrf";
    case SparsityKind::Unstructured:
      return "unstructured";
  }
  return "?";
}

std::optional<SparsityKind> parse_sparsity_kind(std::string_view name) {
  for (SparsityKind k : {SparsityKind::Dense, SparsityKind::Lrf, SparsityKind::Unstructured})
    if (to_string(k) == name) return k;
  return std::nullopt;
}

SparsityPattern lrf_pattern(Shape shape, std::size_t field) {
  if (field == 0) throw GraphError("lrf_pattern: field size must be positive");
  std::vector<Block> blocks;
  const std::size_t bands = std::max<std::size_t>(1, shape.rows / field);
  const std::size_t height = std::min(field, shape.rows);
  const std::size_t width = std::min(field, shape.cols);
  // Column offsets cycle through the whole-field positions.
  const std::size_t slots = std::max<std::size_t>(1, shape.cols / width);
  for (std::size_t k = 0; k < bands; ++k) {
    blocks.push_back({k * height, (k % slots) * width, height, width});
  }
  return SparsityPattern::block_list(std::move(blocks));
}

SparsityPattern unstructured_pattern(Shape shape, double fill, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(std::clamp(fill, 0.0, 1.0));
  std::vector<Coord> coords;
  for (std::size_t r = 0; r < shape.rows; ++r)
    for (std::size_t c = 0; c < shape.cols; ++c)
      if (keep(rng)) coords.push_back({r, c});
  if (coords.empty()) coords.push_back({shape.rows / 2, shape.cols / 2});
  return SparsityPattern::coords(std::move(coords));
}

SparsityPattern make_pattern(SparsityKind kind, Shape shape, std::size_t field, double fill,
                             std::uint64_t seed) {
  switch (kind) {
    case SparsityKind::Lrf:
      return lrf_pattern(shape, field);
    case SparsityKind::Unstructured:
      return unstructured_pattern(shape, fill, seed);
    case SparsityKind::Dense:
      break;
  }
  return SparsityPattern::dense();
}

namespace {

VarKind weight_kind(const SparsityPattern& p) {
  return p.is_dense() ? VarKind::DenseMatrix : VarKind::SparseMatrix;
}

void close_loop(GraphBuilder& b, const std::string& cost, const LoopControl& loop) {
  b.until_converged(cost, loop.tol, loop.max_iters);
}

/// A' * B, restricted to the pattern of `target` when it is sparse.
std::string weight_gradient(GraphBuilder& b, const std::string& a, const std::string& rhs,
                            const std::string& target, const SparsityPattern& pattern) {
  if (pattern.is_dense()) return b.matmul(b.unary(OpKind::Transpose, a), rhs);
  NodeAttrs attrs;
  attrs.pattern_of = target;
  return b.add_node(OpKind::MaskedMatMul, {a, rhs}, attrs).id;
}

std::string sigmoid_layer(GraphBuilder& b, const std::string& product, const std::string& bias) {
  return b.unary(OpKind::Sigmoid, b.binary(OpKind::BiasAddRow, product, bias));
}

/// x - lr * step
std::string descend(GraphBuilder& b, const std::string& x, const std::string& lr,
                    const std::string& step) {
  return b.binary(OpKind::Sub, x, b.binary(OpKind::ScaleByScalar, lr, step));
}

/// sigma'(h) chain: delta .* h .* (1 - h)
std::string sigmoid_delta(GraphBuilder& b, const std::string& delta, const std::string& h,
                          const std::string& one) {
  return b.binary(OpKind::MulElem, b.binary(OpKind::MulElem, delta, h),
                  b.binary(OpKind::Sub, one, h));
}

void check_sizes(const ModelSizes& s) {
  if (s.batch == 0 || s.visible == 0 || s.hidden == 0) {
    throw GraphError("model sizes must be positive");
  }
}

}  // namespace

Model build_backprop(const BackpropSpec& spec) {
  check_sizes(spec.sizes);
  const auto [m, v, h] = spec.sizes;
  GraphBuilder b;
  b.declare_var("V", VarKind::DenseMatrix, {m, v}, Role::Constant);
  b.declare_var("T", VarKind::DenseMatrix, {m, h}, Role::Constant);
  b.declare_var("W", weight_kind(spec.weight_pattern), {v, h}, Role::State, spec.weight_pattern);
  b.declare_var("bias", VarKind::Vector, {1, h}, Role::State);
  b.declare_var("lr", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("one", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("H", VarKind::DenseMatrix, {m, h}, Role::Derived);
  b.declare_var("dH", VarKind::DenseMatrix, {m, h}, Role::Derived);
  b.declare_var("cost", VarKind::Scalar, {1, 1}, Role::Derived);

  b.unary(OpKind::Sigmoid, b.binary(OpKind::BiasAddRow, b.matmul("V", "W"), "bias"), "H");
  b.binary(OpKind::MulElem, b.binary(OpKind::MulElem, b.binary(OpKind::Sub, "H", "T"), "H"),
           b.binary(OpKind::Sub, "one", "H"), "dH");
  const auto w_next = descend(b, "W", "lr", weight_gradient(b, "V", "dH", "W", spec.weight_pattern));
  const auto bias_next = descend(b, "bias", "lr", b.unary(OpKind::SumRows, "dH"));
  b.unary(OpKind::SumAll, b.unary(OpKind::Square, b.binary(OpKind::Sub, "T", "H")), "cost");
  b.bind_update("W", w_next);
  b.bind_update("bias", bias_next);
  b.add_output("W");
  b.add_output("bias");
  close_loop(b, "cost", spec.loop);
  return {std::move(b).finish(), {{"lr", Matrix(1, 1, spec.lr)}, {"one", Matrix(1, 1, 1.0)}}};
}

Model build_ista(const IstaSpec& spec) {
  check_sizes(spec.sizes);
  if (!(spec.lipschitz > 0.0)) throw GraphError("ISTA step constant must be positive");
  if (!(spec.alpha >= 0.0)) throw GraphError("ISTA sparsity weight must be nonnegative");
  const auto [m, v, h] = spec.sizes;
  GraphBuilder b;
  b.declare_var("X", VarKind::DenseMatrix, {m, v}, Role::Constant);
  b.declare_var("W", weight_kind(spec.dictionary_pattern), {v, h}, Role::Constant,
                spec.dictionary_pattern);
  b.declare_var("Z", VarKind::DenseMatrix, {m, h}, Role::State);
  b.declare_var("step", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("half", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("alpha", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("cost", VarKind::Scalar, {1, 1}, Role::Derived);

  const auto residual = b.binary(OpKind::Sub, b.matmul("Z", b.unary(OpKind::Transpose, "W")), "X");
  const auto gradient = b.matmul(residual, "W");
  NodeAttrs shrink;
  shrink.theta = spec.alpha / spec.lipschitz;
  const auto z_next = b.add_node(OpKind::SoftShrink, {descend(b, "Z", "step", gradient)}, shrink).id;
  const auto fit = b.binary(OpKind::ScaleByScalar, "half",
                            b.unary(OpKind::SumAll, b.unary(OpKind::Square, residual)));
  const auto l1 = b.binary(OpKind::ScaleByScalar, "alpha",
                           b.unary(OpKind::SumAll, b.unary(OpKind::Abs, "Z")));
  b.binary(OpKind::Add, fit, l1, "cost");
  b.bind_update("Z", z_next);
  b.add_output("Z");
  close_loop(b, "cost", spec.loop);
  return {std::move(b).finish(),
          {{"step", Matrix(1, 1, 1.0 / spec.lipschitz)},
           {"half", Matrix(1, 1, 0.5)},
           {"alpha", Matrix(1, 1, spec.alpha)}}};
}

Model build_rbm(const RbmSpec& spec) {
  check_sizes(spec.sizes);
  const auto [m, v, h] = spec.sizes;
  GraphBuilder b;
  b.declare_var("V", VarKind::DenseMatrix, {m, v}, Role::Constant);
  b.declare_var("W", weight_kind(spec.weight_pattern), {v, h}, Role::State, spec.weight_pattern);
  b.declare_var("c", VarKind::Vector, {1, h}, Role::State);
  b.declare_var("b", VarKind::Vector, {1, v}, Role::State);
  b.declare_var("lr", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("cost", VarKind::Scalar, {1, 1}, Role::Derived);

  const auto h0 = sigmoid_layer(b, b.matmul("V", "W"), "c");
  const auto v1 = sigmoid_layer(b, b.matmul(h0, b.unary(OpKind::Transpose, "W")), "b");
  const auto h1 = sigmoid_layer(b, b.matmul(v1, "W"), "c");
  const auto positive = weight_gradient(b, "V", h0, "W", spec.weight_pattern);
  const auto negative = weight_gradient(b, v1, h1, "W", spec.weight_pattern);
  auto ascend = [&](const std::string& x, const std::string& pos, const std::string& neg) {
    return b.binary(OpKind::Add, x,
                    b.binary(OpKind::ScaleByScalar, "lr", b.binary(OpKind::Sub, pos, neg)));
  };
  b.bind_update("W", ascend("W", positive, negative));
  b.bind_update("c", ascend("c", b.unary(OpKind::SumRows, h0), b.unary(OpKind::SumRows, h1)));
  b.bind_update("b", ascend("b", b.unary(OpKind::SumRows, "V"), b.unary(OpKind::SumRows, v1)));
  b.unary(OpKind::SumAll, b.unary(OpKind::Square, b.binary(OpKind::Sub, "V", v1)), "cost");
  b.add_output("W");
  b.add_output("c");
  b.add_output("b");
  close_loop(b, "cost", spec.loop);
  return {std::move(b).finish(), {{"lr", Matrix(1, 1, spec.lr)}}};
}

Model build_ae(const AeSpec& spec) {
  check_sizes(spec.sizes);
  const auto [m, v, h] = spec.sizes;
  SparsityPattern decoder_pattern;
  if (spec.weight_pattern.is_block_list()) {
    std::vector<Block> blocks;
    for (const Block& f : spec.weight_pattern.blocks()) blocks.push_back({f.col0, f.row0, f.cols, f.rows});
    decoder_pattern = SparsityPattern::block_list(std::move(blocks));
  } else if (spec.weight_pattern.is_coord()) {
    std::vector<Coord> coords;
    for (const Coord& c : spec.weight_pattern.coord_list()) coords.push_back({c.col, c.row});
    decoder_pattern = SparsityPattern::coords(std::move(coords));
  }
  GraphBuilder b;
  b.declare_var("V", VarKind::DenseMatrix, {m, v}, Role::Constant);
  b.declare_var("W", weight_kind(spec.weight_pattern), {v, h}, Role::State, spec.weight_pattern);
  b.declare_var("W2", weight_kind(decoder_pattern), {h, v}, Role::State, decoder_pattern);
  b.declare_var("c", VarKind::Vector, {1, h}, Role::State);
  b.declare_var("b", VarKind::Vector, {1, v}, Role::State);
  b.declare_var("lr", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("one", VarKind::Scalar, {1, 1}, Role::Constant);
  b.declare_var("cost", VarKind::Scalar, {1, 1}, Role::Derived);

  const auto hidden = sigmoid_layer(b, b.matmul("V", "W"), "c");
  const auto recon = sigmoid_layer(b, b.matmul(hidden, "W2"), "b");
  const auto d_recon = sigmoid_delta(b, b.binary(OpKind::Sub, recon, "V"), recon, "one");
  const auto d_hidden = sigmoid_delta(
      b, b.matmul(d_recon, b.unary(OpKind::Transpose, "W2")), hidden, "one");
  b.bind_update("W", descend(b, "W", "lr", weight_gradient(b, "V", d_hidden, "W", spec.weight_pattern)));
  b.bind_update("W2", descend(b, "W2", "lr", weight_gradient(b, hidden, d_recon, "W2", decoder_pattern)));
  b.bind_update("c", descend(b, "c", "lr", b.unary(OpKind::SumRows, d_hidden)));
  b.bind_update("b", descend(b, "b", "lr", b.unary(OpKind::SumRows, d_recon)));
  b.unary(OpKind::SumAll, b.unary(OpKind::Square, b.binary(OpKind::Sub, recon, "V")), "cost");
  b.add_output("W");
  b.add_output("W2");
  b.add_output("c");
  b.add_output("b");
  close_loop(b, "cost", spec.loop);
  return {std::move(b).finish(), {{"lr", Matrix(1, 1, spec.lr)}, {"one", Matrix(1, 1, 1.0)}}};
}

double ista_lipschitz(const Matrix& w, std::size_t iterations) {
  // Power iteration on W'W, applied as W' (W x).
  const std::size_t n = w.cols();
  std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n))), y(w.rows()), z(n);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += w(r, c) * x[c];
      y[r] = s;
    }
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) z[c] += w(r, c) * y[r];
    double norm = 0.0;
    for (double e : z) norm += e * e;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    lambda = norm;  // ||W'W x|| with ||x|| = 1
    for (std::size_t c = 0; c < n; ++c) x[c] = z[c] / norm;
  }
  return 1.1 * std::max(lambda, 1e-12);
}

ValueMap random_values(const ExecutionGraph& graph, std::uint64_t seed, ValueMap given) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (const VarDecl& v : graph.vars) {
    if (v.role == Role::Derived || given.count(v.id)) continue;
    // Per-var stream: values do not depend on declaration order.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : v.id) h = (h ^ ch) * 1099511628211ull;
    std::mt19937_64 rng(seed ^ h);
    Matrix m(v.shape);
    for (double& x : m.values()) x = dist(rng);
    if (!v.pattern.is_dense()) {
      for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
          if (!v.pattern.contains(r, c)) m(r, c) = 0.0;
    }
    given.emplace(v.id, std::move(m));
  }
  return given;
}

}  // namespace nnc
