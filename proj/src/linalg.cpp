#include "deepmide/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

namespace deepmide::linalg {

Mat Cholesky::inverse() const {
  const auto n = llt.matrixLLT().rows();
  return llt.solve(Mat::Identity(n, n));
}

double Cholesky::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Cholesky robust_cholesky(const Mat& a, const char* context) {
  Cholesky out;
  out.llt.compute(a);
  if (out.llt.info() == Eigen::Success && a.allFinite()) return out;

  const auto n = a.rows();
  const double scale = n > 0 ? std::abs(a.diagonal().mean()) : 0.0;
  for (double rel = 1e-12; rel <= 1.0001e-8; rel *= 10.0) {
    const double jitter = rel * (scale > 0.0 ? scale : 1.0);
    out.llt.compute(a + jitter * Mat::Identity(n, n));
    if (out.llt.info() == Eigen::Success) {
      out.jitter = jitter;
      return out;
    }
  }
  throw NumericalError(std::string(context) + ": matrix of dimension " + std::to_string(n) +
                       " is not positive definite after jitter");
}

double min_eigenvalue(const Mat& a) {
  if (a.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace deepmide::linalg
