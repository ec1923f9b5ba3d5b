#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cmp {

// dense row-major matrix
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

inline Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

// C = A * B. ikj loop order so the inner loop runs contiguously over rows of B
// and C; gcc vectorizes it without reassociation, so results do not depend on
// build flags beyond rounding of individual fma-free ops.
inline void matmul(const Mat& A, const Mat& B, Mat& C) {
  if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  if (C.rows != A.rows || C.cols != B.cols) C = Mat(A.rows, B.cols);
  C.zero();
  const int m = A.rows, k = A.cols, n = B.cols;
  for (int i = 0; i < m; ++i) {
    double* ci = C.row(i);
    const double* ai = A.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = B.row(p);
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C = A^T * B
inline void matmul_tn(const Mat& A, const Mat& B, Mat& C) {
  const Mat at = transpose(A);
  matmul(at, B, C);
}

// C = A * B^T
inline void matmul_nt(const Mat& A, const Mat& B, Mat& C) {
  const Mat bt = transpose(B);
  matmul(A, bt, C);
}

}  // namespace cmp
