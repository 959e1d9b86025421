#include "auber/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "auber/errors.hpp"

namespace auber {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix dimensions must be positive, got " + shape_str(rows, cols));
  }
  data_.assign(rows * cols, 0.0);
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0 || rows.begin()->size() == 0) {
    throw ShapeError("from_rows needs at least one row and one column");
  }
  Matrix m(rows.size(), rows.begin()->size());
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != m.cols_) {
      throw ShapeError("ragged row in from_rows: row " + std::to_string(i) + " has " +
                       std::to_string(row.size()) + " entries, expected " +
                       std::to_string(m.cols_));
    }
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool same_shape(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.rows(), a.cols()) + " * " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn shape mismatch: " + shape_str(a.rows(), a.cols()) + "^T * " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.data() + k * a.cols();
    const double* bk = b.data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      double* ci = c.data() + i * n;
      const double aki = ak[i];
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt shape mismatch: " + shape_str(a.rows(), a.cols()) + " * " +
                     shape_str(b.rows(), b.cols()) + "^T");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.data() + i * a.cols();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.data() + j * b.cols();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) {
    throw ShapeError("add shape mismatch: " + shape_str(a.rows(), a.cols()) + " + " +
                     shape_str(b.rows(), b.cols()));
  }
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.storage()[i] = a.storage()[i] + b.storage()[i];
  return c;
}

Matrix row_softmax(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double mx = a(i, 0);
    for (std::size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double e = std::exp(a(i, j) - mx);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) /= sum;
  }
  return out;
}

double entrywise_norm(const Matrix& a, int p) {
  if (p != 1 && p != 2) {
    throw InputError("entrywise_norm supports p = 1 or 2, got " + std::to_string(p));
  }
  double s = 0.0;
  if (p == 1) {
    for (double v : a.storage()) s += std::abs(v);
    return s;
  }
  for (double v : a.storage()) s += v * v;
  return std::sqrt(s);
}

std::vector<double> standardize(const std::vector<double>& v) {
  if (v.size() < 2) {
    throw InputError("standardize needs at least 2 values, got " + std::to_string(v.size()));
  }
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  double maxabs = 0.0;
  for (double x : v) {
    var += (x - mean) * (x - mean);
    maxabs = std::max(maxabs, std::abs(x));
  }
  const double sigma = std::sqrt(var / n);
  std::vector<double> out(v.size(), 0.0);
  if (sigma <= 1e-12 * maxabs || sigma == 0.0) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) / sigma;
  return out;
}

std::vector<double> softmax(const std::vector<double>& v) {
  if (v.empty()) throw InputError("softmax of empty vector");
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

void fill_uniform(Matrix& m, Rng& rng, double lo, double hi) {
  for (double& v : m.storage()) v = rng.uniform(lo, hi);
}

void fill_xavier(Matrix& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  fill_uniform(m, rng, -limit, limit);
}

}  // namespace auber
