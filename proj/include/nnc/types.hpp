// Copyright 2026 The nnc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Value types shared by every layer: shapes, dense row-major matrices and the
// exception hierarchy.

#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

class TuneError : public Error {
 public:
  using Error::Error;
};

class ExecError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  bool is_scalar() const { return rows == 1 && cols == 1; }
  std::size_t size() const { return rows * cols; }
  std::string str() const;

  friend auto operator<=>(const Shape&, const Shape&) = default;
};

/// Dense row-major matrix. Used for initial values, results and as the
/// storage of the reference evaluator; the executor packs these into
/// blocked formats.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  explicit Matrix(Shape shape, double fill = 0.0) : Matrix(shape.rows, shape.cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Shape shape() const { return {rows_, cols_}; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Named matrix values: initial values going in, final values coming out.
using ValueMap = std::map<std::string, Matrix, std::less<>>;

/// Max-norm relative difference: max|a-b| / max|b|. Returns the absolute
/// difference when the reference is identically zero.
double relative_difference(const Matrix& actual, const Matrix& reference);

}  // namespace nnc
