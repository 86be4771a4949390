#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "anomattr/error.hpp"
#include "anomattr/rng.hpp"

namespace anomattr {

// Dense row-major matrix of doubles. Column vectors are n x 1.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

  static Matrix column(std::vector<double> v) {
    Matrix m;
    m.rows = static_cast<int>(v.size());
    m.cols = 1;
    m.data = std::move(v);
    return m;
  }

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::ShapeMismatch,
         std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    fail(ErrorKind::ShapeMismatch, "matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[static_cast<std::size_t>(i) * a.cols];
    double* crow = &c.data[static_cast<std::size_t>(i) * c.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// dst += a * b
inline void acc_matmul(Matrix& dst, const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows || dst.rows != a.rows || dst.cols != b.cols) {
    fail(ErrorKind::ShapeMismatch, "acc_matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[static_cast<std::size_t>(i) * a.cols];
    double* drow = &dst.data[static_cast<std::size_t>(i) * dst.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) drow[j] += aik * brow[j];
    }
  }
}

// dst += a * b^T
inline void acc_matmul_nt(Matrix& dst, const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols || dst.rows != a.rows || dst.cols != b.rows) {
    fail(ErrorKind::ShapeMismatch, "acc_matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[static_cast<std::size_t>(i) * a.cols];
    double* drow = &dst.data[static_cast<std::size_t>(i) * dst.cols];
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = &b.data[static_cast<std::size_t>(j) * b.cols];
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      drow[j] += s;
    }
  }
}

// dst += a^T * b
inline void acc_matmul_tn(Matrix& dst, const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || dst.rows != a.cols || dst.cols != b.cols) {
    fail(ErrorKind::ShapeMismatch, "acc_matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  }
  for (int k = 0; k < a.rows; ++k) {
    const double* arow = &a.data[static_cast<std::size_t>(k) * a.cols];
    const double* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
    for (int i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* drow = &dst.data[static_cast<std::size_t>(i) * dst.cols];
      for (int j = 0; j < b.cols; ++j) drow[j] += aki * brow[j];
    }
  }
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

// Glorot/Xavier uniform init: +-sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot_uniform(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& x : m.data) x = rng.uniform(-limit, limit);
  return m;
}

}  // namespace anomattr
