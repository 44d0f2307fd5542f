#include "diffest/linalg.hpp"

#include <cmath>

#include "diffest/common.hpp"

namespace diffest::linalg {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<double> least_squares_qr(const Matrix& A, const std::vector<double>& b,
                                     double ridge) {
  if (A.rows == 0 || A.cols == 0) throw Error("least_squares_qr: empty system");
  if (A.rows != b.size()) throw Error("least_squares_qr: row/rhs mismatch");
  if (ridge < 0.0) throw Error("least_squares_qr: negative ridge");

  const std::size_t n = A.cols;
  const std::size_t m = ridge > 0.0 ? A.rows + n : A.rows;

  // Work on [A; sqrt(ridge) I] with rhs [b; 0].
  Matrix R(m, n);
  std::vector<double> rhs(m, 0.0);
  for (std::size_t r = 0; r < A.rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) R.at(r, c) = A.at(r, c);
    rhs[r] = b[r];
  }
  if (ridge > 0.0) {
    const double s = std::sqrt(ridge);
    for (std::size_t c = 0; c < n; ++c) R.at(A.rows + c, c) = s;
  }

  // Householder reflections, applied to rhs as we go.
  for (std::size_t k = 0; k < n && k < m; ++k) {
    double norm = 0.0;
    for (std::size_t r = k; r < m; ++r) norm += R.at(r, k) * R.at(r, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = R.at(k, k) > 0 ? -norm : norm;
    std::vector<double> v(m - k, 0.0);
    v[0] = R.at(k, k) - alpha;
    for (std::size_t r = k + 1; r < m; ++r) v[r - k] = R.at(r, k);
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 == 0.0) continue;

    for (std::size_t c = k; c < n; ++c) {
      double proj = 0.0;
      for (std::size_t r = k; r < m; ++r) proj += v[r - k] * R.at(r, c);
      proj *= 2.0 / vnorm2;
      for (std::size_t r = k; r < m; ++r) R.at(r, c) -= proj * v[r - k];
    }
    double proj = 0.0;
    for (std::size_t r = k; r < m; ++r) proj += v[r - k] * rhs[r];
    proj *= 2.0 / vnorm2;
    for (std::size_t r = k; r < m; ++r) rhs[r] -= proj * v[r - k];
  }

  // Back substitution on the upper-triangular block.
  std::vector<double> x(n, 0.0);
  for (std::size_t ci = n; ci-- > 0;) {
    double s = rhs[ci];
    for (std::size_t c = ci + 1; c < n; ++c) s -= R.at(ci, c) * x[c];
    const double d = R.at(ci, ci);
    if (d == 0.0) throw Error("least_squares_qr: rank-deficient system, add ridge");
    x[ci] = s / d;
  }
  return x;
}

}  // namespace diffest::linalg
