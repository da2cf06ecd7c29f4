// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference training loops expressed as execution graphs, plus the weight
// patterns and seeded inputs the benchmarks feed them.

#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "nnc/graph.hpp"

namespace nnc {

enum class SparsityKind { Dense, Lrf, Unstructured };

std::string_view to_string(SparsityKind kind);
std::optional<SparsityKind> parse_sparsity_kind(std::string_view name);

/// Square fields of side `field`, one per field-high row band, with column
/// offsets wrapping around the matrix. A trailing partial band is dropped
/// unless the matrix is shorter than one field.
SparsityPattern lrf_pattern(Shape shape, std::size_t field);
/// Each position kept independently with probability `fill`; never empty.
SparsityPattern unstructured_pattern(Shape shape, double fill, std::uint64_t seed);
SparsityPattern make_pattern(SparsityKind kind, Shape shape, std::size_t field, double fill,
                             std::uint64_t seed);

struct LoopControl {
  double tol = 1e-6;
  std::size_t max_iters = 100;
};

/// Layer sizes shared by every model: a batch of `batch` rows with `visible`
/// inputs feeding `hidden` units.
struct ModelSizes {
  std::size_t batch = 1;
  std::size_t visible = 1;
  std::size_t hidden = 1;
};

/// A graph with the hyperparameter values its Constant scalars take.
struct Model {
  ExecutionGraph graph;
  ValueMap fixed;
};

struct BackpropSpec {
  ModelSizes sizes;
  SparsityPattern weight_pattern;  // visible x hidden
  double lr = 0.01;
  LoopControl loop;
};

struct IstaSpec {
  ModelSizes sizes;
  SparsityPattern dictionary_pattern;  // visible x hidden
  double lipschitz = 1.0;              // step is 1 / lipschitz
  double alpha = 0.1;
  LoopControl loop;
};

struct RbmSpec {
  ModelSizes sizes;
  SparsityPattern weight_pattern;
  double lr = 0.01;
  LoopControl loop;
};

struct AeSpec {
  ModelSizes sizes;
  SparsityPattern weight_pattern;  // encoder; the decoder uses its transpose
  double lr = 0.01;
  LoopControl loop;
};

/// Values: V (batch x visible), T (batch x hidden), State W and bias.
/// H = sigmoid(V*W + bias), dH = (H - T) .* H .* (1 - H),
/// W -= lr * V'*dH (masked to W), bias -= lr * colsum(dH), cost = sum((T - H)^2).
Model build_backprop(const BackpropSpec& spec);
/// Values: X (batch x visible), dictionary W (visible x hidden), State Z.
/// Z = shrink_{alpha/L}(Z - (1/L) (Z*W' - X)*W),
/// cost = 0.5 * sum((Z*W' - X)^2) + alpha * sum(|Z|).
Model build_ista(const IstaSpec& spec);
/// Mean-field CD-1 on V with weights W, hidden bias c and visible bias b;
/// cost is the reconstruction error sum((V - v1)^2).
Model build_rbm(const RbmSpec& spec);
/// Sigmoid autoencoder with untied decoder W2; cost sum((R - V)^2).
Model build_ae(const AeSpec& spec);

/// 1.1 times a power-iteration estimate of the largest eigenvalue of W'*W.
double ista_lipschitz(const Matrix& dictionary, std::size_t iterations = 200);

/// Seeded uniform(-1, 1) values, masked to each var's pattern, for every
/// Constant or State var not already in `given`.
ValueMap random_values(const ExecutionGraph& graph, std::uint64_t seed, ValueMap given = {});

}  // namespace nnc
