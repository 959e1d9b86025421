#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "auber/rng.hpp"

namespace auber {

// Dense row-major matrix of doubles. Every reduction in the library
// runs in a fixed order, so results are reproducible to the bit.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double v);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

bool same_shape(const Matrix& a, const Matrix& b);

// a * b. Inner loops are ordered i-k-j, which produces bit-identical
// results to the schoolbook i-j-k loop while vectorizing well.
Matrix matmul(const Matrix& a, const Matrix& b);
// transpose(a) * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * transpose(b)
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);

// Softmax applied to each row, with the per-row max subtracted before
// exponentiation so large logits cannot overflow.
Matrix row_softmax(const Matrix& a);

// Entrywise p-norm over all elements; p must be 1 or 2.
double entrywise_norm(const Matrix& a, int p);

// (v - mean) / sigma with population sigma. A spread at or below
// 1e-12 * max|v| is treated as zero and maps the vector to all zeros,
// which keeps identically-loaded heads from amplifying rounding noise.
std::vector<double> standardize(const std::vector<double>& v);

std::vector<double> softmax(const std::vector<double>& v);

void fill_uniform(Matrix& m, Rng& rng, double lo, double hi);
// Glorot/Xavier uniform with limit sqrt(6 / (rows + cols)).
void fill_xavier(Matrix& m, Rng& rng);

}  // namespace auber
