#include "cdgp/patching.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace cdgp;
using namespace cdgp_test;

TEST_SUITE_BEGIN("patching");

TEST_CASE("28x28 with 5x5 stride 1 yields 576 patches of length 25") {
  const PatchGeometry g = PatchGeometry::image(28, 28, 1, 5, 5, 1);
  CHECK(g.patch_count() == 576);
  Rng rng = Rng::root(1).split("img");
  const Mat img = random_matrix(rng, 1, g.flat_dim());
  const Mat p = extract_patches(img, g);
  CHECK(p.rows() == 576);
  CHECK(p.cols() == 25);
}

TEST_CASE("28x28 with 3x3 stride 1 yields 676 patches") {
  const PatchGeometry g = PatchGeometry::image(28, 28, 1, 3, 3, 1);
  CHECK(g.patch_count() == 676);
}

TEST_CASE("full-image patch degenerates to the flattened image") {
  const PatchGeometry g = PatchGeometry::image(6, 5, 2, 6, 5, 1);
  Rng rng = Rng::root(2).split("img");
  const Mat img = random_matrix(rng, 1, g.flat_dim());
  const Mat p = extract_patches(img, g);
  CHECK(p.rows() == 1);
  CHECK((p.row(0) - img.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("patch rows follow the row-major grid with channels innermost") {
  // 3x3 image, 2 channels, 2x2 patches: value(y,x,c) = 100*y + 10*x + c
  const PatchGeometry g = PatchGeometry::image(3, 3, 2, 2, 2, 1);
  Mat img(1, g.flat_dim());
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 3; ++x)
      for (Index c = 0; c < 2; ++c)
        img(0, (y * 3 + x) * 2 + c) = 100.0 * y + 10.0 * x + c;
  const Mat p = extract_patches(img, g);
  CHECK(p.rows() == 4);
  // patch 1 sits at grid (0,1): pixels (0,1),(0,2),(1,1),(1,2)
  Mat expect(1, 8);
  expect << 10, 11, 20, 21, 110, 111, 120, 121;
  CHECK((p.row(1) - expect.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("patch count matches the closed form over a geometry sweep") {
  for (Index w = 3; w <= 9; w += 2) {
    for (Index pw = 1; pw <= w; ++pw) {
      for (Index stride = 1; stride <= 3; ++stride) {
        const PatchGeometry g = PatchGeometry::image(w, w, 1, pw, pw, stride);
        Rng rng = Rng::root(3).split("sweep", w, pw);
        const Mat img = random_matrix(rng, 2, g.flat_dim());
        const Mat p = extract_patches(img, g);
        const Index expected = ((w - pw) / stride + 1) * ((w - pw) / stride + 1);
        CHECK(g.patch_count() == expected);
        CHECK(p.rows() == 2 * expected);
      }
    }
  }
}

TEST_CASE("non-overlapping patches partition the image pixels") {
  const PatchGeometry g = PatchGeometry::image(8, 8, 1, 4, 4, 4);
  Rng rng = Rng::root(4).split("part");
  const Mat img = random_matrix(rng, 1, g.flat_dim());
  const Mat p = extract_patches(img, g);
  std::multiset<double> from_img(img.data(), img.data() + img.size());
  std::multiset<double> from_patches(p.data(), p.data() + p.size());
  CHECK(from_img == from_patches);
}

TEST_CASE("scatter_patches is the adjoint of extract_patches") {
  const PatchGeometry g = PatchGeometry::image(6, 6, 1, 3, 3, 1);
  Rng rng = Rng::root(5).split("adj");
  const Mat x = random_matrix(rng, 2, g.flat_dim());
  const Mat u = random_matrix(rng, 2 * g.patch_count(), g.patch_dim());
  // <extract(x), u> == <x, scatter(u)>
  const double lhs = extract_patches(x, g).cwiseProduct(u).sum();
  const double rhs = scatter_patches(u, 2, g).cwiseProduct(x).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("geometry mismatch raises") {
  const PatchGeometry g = PatchGeometry::image(6, 6, 1, 3, 3, 1);
  CHECK_THROWS_AS(extract_patches(Mat::Zero(1, 35), g), GeometryMismatch);
  CHECK_THROWS_AS(PatchGeometry::image(4, 4, 1, 5, 5, 1), GeometryMismatch);
}

TEST_CASE("draw_subset: k = P returns every index") {
  const PatchSubset s = draw_subset(10, 10, Rng::root(0).split("sub"));
  REQUIRE(s.indices.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(s.indices[i] == i);
}

TEST_CASE("draw_subset: k = 1 lands in range") {
  const PatchSubset s = draw_subset(576, 1, Rng::root(1).split("sub"));
  REQUIRE(s.indices.size() == 1);
  CHECK(s.indices[0] >= 0);
  CHECK(s.indices[0] < 576);
}

TEST_CASE("draw_subset: 211 of 2116 distinct sorted indices") {
  const PatchSubset s = draw_subset(2116, 211, Rng::root(2).split("sub"));
  REQUIRE(s.indices.size() == 211);
  CHECK(std::is_sorted(s.indices.begin(), s.indices.end()));
  CHECK(std::adjacent_find(s.indices.begin(), s.indices.end()) ==
        s.indices.end());
  CHECK(s.indices.back() < 2116);
}

TEST_CASE("draw_subset: oversized request raises InvalidSize") {
  CHECK_THROWS_AS(draw_subset(5, 6, Rng::root(0)), InvalidSize);
}

TEST_CASE("draw_subset: deterministic given the seed") {
  const PatchSubset a = draw_subset(100, 17, Rng::root(9).split("s", 3));
  const PatchSubset b = draw_subset(100, 17, Rng::root(9).split("s", 3));
  CHECK(a.indices == b.indices);
}

TEST_SUITE_END();
