#include "cdgp/linalg.hpp"

#include <cmath>

namespace cdgp {

namespace {

void check_square_symmetric(const Mat& a) {
  if (a.rows() != a.cols())
    throw DimensionMismatch("cholesky: matrix is not square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * scale)
        throw DimensionMismatch("cholesky: matrix is not symmetric");
}

bool try_cholesky(const Mat& a, double jitter, Mat& out) {
  const Index n = a.rows();
  out = Mat::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double d = a(j, j) + jitter;
    for (Index k = 0; k < j; ++k) d -= out(j, k) * out(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    out(j, j) = ljj;
    for (Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Index k = 0; k < j; ++k) s -= out(i, k) * out(j, k);
      out(i, j) = s / ljj;
    }
  }
  return true;
}

}  // namespace

Mat cholesky(const Mat& a, double jitter) {
  check_square_symmetric(a);
  Mat l;
  if (!try_cholesky(a, jitter, l))
    throw NotPositiveDefinite("cholesky failed at jitter " + std::to_string(jitter));
  return l;
}

CholeskyResult cholesky_with_policy(const Mat& a, double initial_jitter) {
  check_square_symmetric(a);
  const double mean_diag = a.diagonal().mean();
  const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
  double jitter = initial_jitter >= 0.0 ? initial_jitter : 1e-6 * scale;
  const double max_jitter = 1e-2 * scale;
  CholeskyResult result;
  for (;;) {
    if (try_cholesky(a, jitter, result.factor)) {
      result.jitter = jitter;
      return result;
    }
    if (jitter <= 0.0) {
      jitter = 1e-6 * scale;
    } else {
      jitter *= 10.0;
      if (jitter > max_jitter * (1.0 + 1e-12))
        throw NotPositiveDefinite(
            "cholesky failed after jitter escalation to " + std::to_string(jitter));
    }
  }
}

Mat tri_solve(const Mat& lower, const Mat& rhs, bool transposed) {
  if (lower.rows() != lower.cols())
    throw DimensionMismatch("tri_solve: L is not square");
  if (lower.rows() != rhs.rows())
    throw DimensionMismatch("tri_solve: dimension mismatch between L and B");
  for (Index i = 0; i < lower.rows(); ++i)
    if (lower(i, i) == 0.0)
      throw SingularMatrix("tri_solve: zero diagonal entry at " + std::to_string(i));
  Mat x = rhs;
  if (transposed)
    lower.transpose().template triangularView<Eigen::Upper>().solveInPlace(x);
  else
    lower.template triangularView<Eigen::Lower>().solveInPlace(x);
  return x;
}

Mat squared_distances(const Mat& a, const Mat& b, bool same_inputs) {
  if (a.cols() != b.cols())
    throw DimensionMismatch("squared_distances: feature dimensions differ");
  const Vec na = a.rowwise().squaredNorm();
  const Vec nb = b.rowwise().squaredNorm();
  Mat d = -2.0 * (a * b.transpose());
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  d = d.cwiseMax(0.0);
  if (same_inputs) {
    d.diagonal().setZero();
    for (Index i = 0; i < d.rows(); ++i)
      for (Index j = 0; j < i; ++j) d(j, i) = d(i, j);
  }
  return d;
}

}  // namespace cdgp
