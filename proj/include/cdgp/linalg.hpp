#pragma once

#include "cdgp/common.hpp"

namespace cdgp {

// Lower Cholesky factor of A + jitter*I. Consumes only the lower triangle;
// throws NotPositiveDefinite if a pivot is not strictly positive.
Mat cholesky(const Mat& a, double jitter);

struct CholeskyResult {
  Mat factor;
  double jitter = 0.0;  // jitter actually added to the diagonal
};

// Escalating-jitter factorization: starts at 1e-6*mean(diag(A)) and multiplies
// by 10 until 1e-2*mean(diag(A)), then gives up with NotPositiveDefinite.
// `initial_jitter < 0` selects the default start.
CholeskyResult cholesky_with_policy(const Mat& a, double initial_jitter = -1.0);

// Solves L*X = B (or L^T*X = B when `transposed`) for lower-triangular L.
Mat tri_solve(const Mat& lower, const Mat& rhs, bool transposed = false);

// Squared Euclidean distances between the rows of A and the rows of B,
// computed via one matrix product and clamped at zero. When `same_inputs`
// the diagonal is set to exactly zero.
Mat squared_distances(const Mat& a, const Mat& b, bool same_inputs = false);

}  // namespace cdgp
