#include "cdgp/inducing.hpp"

#include "cdgp/data.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>

using namespace cdgp;
using namespace cdgp_test;

TEST_SUITE_BEGIN("inducing");

TEST_CASE("kmeans: n = M returns the points themselves") {
  Rng rng = Rng::root(1).split("eq");
  const Mat pts = random_matrix(rng, 4, 3);
  const KMeansResult res = kmeans(pts, 4, rng.split("km"));
  // match up to permutation
  for (Index i = 0; i < 4; ++i) {
    double best = 1e300;
    for (Index j = 0; j < 4; ++j)
      best = std::min(best, (res.centroids.row(j) - pts.row(i)).norm());
    CHECK(best < 1e-9);
  }
}

TEST_CASE("kmeans: two separated blobs land within 0.1 of the blob means") {
  Rng rng = Rng::root(2).split("blobs");
  const Index n = 200, d = 4;
  Mat pts(n, d);
  Mat mean0 = Mat::Zero(1, d), mean1 = Mat::Constant(1, d, 10.0);
  for (Index i = 0; i < n; ++i) {
    const Mat base = (i % 2 == 0) ? mean0 : mean1;
    pts.row(i) = base + 0.05 * random_matrix(rng, 1, d);
  }
  const KMeansResult res = kmeans(pts, 2, rng.split("km"));
  double d00 = (res.centroids.row(0) - mean0.row(0)).norm();
  double d01 = (res.centroids.row(0) - mean1.row(0)).norm();
  const Mat near0 = d00 < d01 ? res.centroids.row(0) : res.centroids.row(1);
  const Mat near1 = d00 < d01 ? res.centroids.row(1) : res.centroids.row(0);
  CHECK((near0.row(0) - mean0.row(0)).norm() < 0.1);
  CHECK((near1.row(0) - mean1.row(0)).norm() < 0.1);
}

TEST_CASE("kmeans: deterministic given the seed") {
  Rng rng = Rng::root(3).split("det");
  const Mat pts = random_matrix(rng, 50, 5);
  const KMeansResult a = kmeans(pts, 7, Rng::root(9).split("km"));
  const KMeansResult b = kmeans(pts, 7, Rng::root(9).split("km"));
  CHECK((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kmeans: too few points raises") {
  CHECK_THROWS_AS(kmeans(Mat::Zero(3, 2), 4, Rng::root(0)), TooFewPoints);
}

TEST_CASE("kmeans: objective is non-increasing across Lloyd iterations") {
  Rng rng = Rng::root(4).split("wcss");
  const Mat pts = random_matrix(rng, 120, 6);
  const KMeansResult res = kmeans(pts, 10, rng.split("km"));
  for (std::size_t i = 1; i < res.wcss_trace.size(); ++i)
    CHECK(res.wcss_trace[i] <= res.wcss_trace[i - 1] + 1e-9);
}

TEST_CASE("kmeans: identical points exercise the duplicate repair path") {
  const Mat pts = Mat::Ones(6, 3);
  const KMeansResult res = kmeans(pts, 2, Rng::root(5).split("km"));
  CHECK((res.centroids.row(0) - res.centroids.row(1)).cwiseAbs().maxCoeff() >
        1e-12);
}

TEST_CASE("top right singular vectors are orthonormal and span the data") {
  Rng rng = Rng::root(6).split("svd");
  // data concentrated on two known directions
  Mat basis = Mat::Zero(5, 2);
  basis(0, 0) = 1.0;
  basis(2, 1) = 1.0;
  const Mat coeff = random_matrix(rng, 100, 2);
  Mat data = coeff * basis.transpose();
  data.col(1).array() += 1e-4;  // tiny off-plane leak
  const Mat w = top_right_singular_vectors(data, 2);
  CHECK((w.transpose() * w - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
  // the span of w matches the span of basis
  const Mat proj = w * w.transpose();
  CHECK((proj * basis - basis).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("initialize_model: conv first layer gets patch-space centroids") {
  Rng rng = Rng::root(7).split("initconv");
  const Dataset toy = generate_toy(rng.split("data"), 40, 28, "rectangles");

  KernelSpec conv;
  conv.kind = KernelKind::WConv;
  conv.geom = PatchGeometry::image(28, 28, 1, 5, 5, 1);
  std::vector<SvgpLayer> layers;
  layers.emplace_back(0, conv, 784, 3, 100, MeanFunction{}, false, 2.0);
  KernelSpec rbf;
  rbf.kind = KernelKind::Rbf;
  layers.emplace_back(1, rbf, 3, 2, 10, MeanFunction{}, false, 2.0);
  DgpModel model(std::move(layers), toy.size(), 1, 25);

  initialize_model(model, toy.images, rng.split("init"));
  CHECK(model.layers()[0].z().value.rows() == 100);
  CHECK(model.layers()[0].z().value.cols() == 25);
  CHECK(model.layers()[1].z().value.rows() == 10);
  CHECK(model.layers()[1].z().value.cols() == 3);
  // every layer must factorize under the jitter policy afterwards
  for (SvgpLayer& layer : model.layers()) CHECK_NOTHROW(layer.prepare());
}

TEST_CASE("initialize_model: rbf stack fills the SVD mean map") {
  Rng rng = Rng::root(8).split("initrbf");
  const Dataset toy = generate_toy(rng.split("data"), 150, 12, "blobs");

  KernelSpec rbf;
  rbf.kind = KernelKind::Rbf;
  std::vector<SvgpLayer> layers;
  MeanFunction linear;
  linear.kind = MeanFunction::Kind::Linear;
  layers.emplace_back(0, rbf, 144, 30, 100, linear, false, 2.0);
  layers.emplace_back(1, rbf, 30, 2, 20, MeanFunction{}, false, 2.0);
  DgpModel model(std::move(layers), toy.size(), 1, 25);

  initialize_model(model, toy.images, rng.split("init"));
  CHECK(model.layers()[0].z().value.rows() == 100);
  CHECK(model.layers()[0].z().value.cols() == 144);
  CHECK(model.layers()[0].mean_function().w.rows() == 144);
  CHECK(model.layers()[0].mean_function().w.cols() == 30);
  CHECK(model.layers()[1].z().value.rows() == 20);
  CHECK(model.layers()[1].z().value.cols() == 30);
  for (SvgpLayer& layer : model.layers()) CHECK_NOTHROW(layer.prepare());
}

TEST_CASE("initialize_model: single point cannot seed an rbf layer") {
  Rng rng = Rng::root(9).split("deg");
  KernelSpec rbf;
  rbf.kind = KernelKind::Rbf;
  std::vector<SvgpLayer> layers;
  layers.emplace_back(0, rbf, 16, 2, 5, MeanFunction{}, false, 2.0);
  DgpModel model(std::move(layers), 1, 1, 25);
  const Mat x = random_matrix(rng, 1, 16);
  CHECK_THROWS_AS(initialize_model(model, x, rng.split("init")), TooFewPoints);
}

TEST_SUITE_END();
