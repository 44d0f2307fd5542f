#pragma once

#include <cstddef>
#include <vector>

namespace diffest::linalg {

// Dense row-major matrix. Small problems only, no sparsity machinery.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double* row(std::size_t r) { return data.data() + r * cols; }
};

// Minimizes ||A x - b||^2 + ridge * ||x||^2 by Householder QR on the
// ridge-augmented stack. Requires rows >= 1, cols >= 1.
std::vector<double> least_squares_qr(const Matrix& A, const std::vector<double>& b,
                                     double ridge);

double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);

}  // namespace diffest::linalg
