#pragma once

#include "cdgp/model.hpp"
#include "cdgp/rng.hpp"

#include <vector>

namespace cdgp {

struct KMeansResult {
  Mat centroids;
  std::vector<Index> counts;
  int iterations = 0;
  std::vector<double> wcss_trace;  // objective after each assignment step
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded from
// the farthest point; duplicated centroids are repaired after convergence.
KMeansResult kmeans(const Mat& points, Index m, Rng rng, int max_iter = 100);

// Caps on the clustering subsample.
inline constexpr Index kMaxKmeansImages = 10000;
inline constexpr Index kMaxKmeansPatches = 100000;

// Sets every layer's inducing inputs (k-means over the layer's init-pass
// inputs; patch space for conv layers) and fills pending SVD mean maps.
void initialize_model(DgpModel& model, const Mat& x_train, Rng rng);

// Top-`count` right singular vectors of `data` (d x count), via the Gram
// eigendecomposition, with a deterministic sign convention.
Mat top_right_singular_vectors(const Mat& data, Index count);

}  // namespace cdgp
