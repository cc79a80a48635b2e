#pragma once

#include <Eigen/Cholesky>

#include "deepmide/domain.hpp"

namespace deepmide::linalg {

inline Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

// Cholesky factor of a symmetric matrix. When the plain factorization fails,
// jitter of 1e-12, 1e-11, ... 1e-8 times the mean diagonal is added in turn.
// Throws NumericalError naming `context` if all attempts fail.
struct Cholesky {
  Eigen::LLT<Mat> llt;
  double jitter = 0.0;

  Mat inverse() const;
  double log_det() const;
};

Cholesky robust_cholesky(const Mat& a, const char* context);

// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Mat& a);

}  // namespace deepmide::linalg
