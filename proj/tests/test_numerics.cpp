#include "cdgp/linalg.hpp"
#include "cdgp/rng.hpp"
#include "cdgp/tape.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace cdgp;
using namespace cdgp_test;

TEST_SUITE_BEGIN("numerics");

TEST_CASE("cholesky: identity stays identity") {
  const Mat l = cholesky(Mat::Identity(3, 3), 0.0);
  CHECK((l - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cholesky: hand-checkable 2x2") {
  Mat a(2, 2);
  a << 4, 2, 2, 3;
  const Mat l = cholesky(a, 0.0);
  CHECK(l(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(l(0, 1) == 0.0);
  CHECK(l(1, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("cholesky: reconstruction of random PSD 10x10") {
  Rng rng = Rng::root(7).split("chol");
  const Mat a = random_psd(rng, 10);
  const Mat l = cholesky(a, 0.0);
  const double rel = (l * l.transpose() - a).norm() / a.norm();
  CHECK(rel < 1e-10);
  for (Index i = 0; i < 10; ++i)
    for (Index j = i + 1; j < 10; ++j) CHECK(l(i, j) == 0.0);
}

TEST_CASE("cholesky: jitter policy rescues rank deficiency") {
  Rng rng = Rng::root(8).split("rank1");
  const Mat v = random_matrix(rng, 4, 1);
  const Mat a = v * v.transpose();  // rank one
  CHECK_THROWS_AS(cholesky(a, 0.0), NotPositiveDefinite);
  const CholeskyResult res = cholesky_with_policy(a);
  CHECK(res.jitter > 0.0);
  Mat target = a;
  target.diagonal().array() += res.jitter;
  CHECK((res.factor * res.factor.transpose() - target).norm() / target.norm() <
        1e-10);
}

TEST_CASE("cholesky: indefinite matrix fails even after escalation") {
  Mat a(2, 2);
  a << 1.0, 0.0, 0.0, -5.0;
  CHECK_THROWS_AS(cholesky_with_policy(a), NotPositiveDefinite);
}

TEST_CASE("cholesky: asymmetric input rejected") {
  Mat a(2, 2);
  a << 1.0, 0.5, 0.2, 1.0;
  CHECK_THROWS_AS(cholesky(a, 0.0), DimensionMismatch);
}

TEST_CASE("tri_solve: identity returns rhs") {
  Rng rng = Rng::root(1).split("tri");
  const Mat b = random_matrix(rng, 4, 3);
  CHECK((tri_solve(Mat::Identity(4, 4), b, false) - b).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("tri_solve: hand-solved 2x2") {
  Mat l(2, 2);
  l << 2, 0, 1, 1;
  Mat b(2, 1);
  b << 2, 3;
  const Mat x = tri_solve(l, b, false);
  CHECK(x(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(x(1, 0) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("tri_solve: round trip recovers X") {
  Rng rng = Rng::root(2).split("tri2");
  const Mat l = random_lower(rng, 8);
  const Mat x = random_matrix(rng, 8, 5);
  CHECK((tri_solve(l, l * x, false) - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tri_solve(l, l.transpose() * x, true) - x).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("tri_solve: zero diagonal raises SingularMatrix") {
  Mat l = Mat::Identity(3, 3);
  l(1, 1) = 0.0;
  CHECK_THROWS_AS(tri_solve(l, Mat::Ones(3, 1), false), SingularMatrix);
}

TEST_CASE("backward: d(x^2)/dx at 3 is 6") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Mat::Constant(1, 1, 3.0));
  ad::Var loss = ad::sum(ad::mul(x, x));
  tape.backward(loss);
  CHECK(tape.gradient(x)(0, 0) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward: sum(cholesky(A)) matches finite differences") {
  // A = C C^T + 2I keeps every perturbed evaluation symmetric PSD.
  Rng rng = Rng::root(3).split("cholgrad");
  Mat c = random_matrix(rng, 4, 4);
  const double rel = fd_check(
      [](ad::Tape& t, std::vector<ad::Var>& v) {
        ad::Var a = ad::add(ad::matmul(v[0], ad::transpose(v[0])),
                            t.constant(Mat(2.0 * Mat::Identity(4, 4))));
        return ad::sum(ad::cholesky(a));
      },
      {c});
  CHECK(rel < 1e-4);
}

TEST_CASE("backward: primitive operations pass finite-difference checks") {
  Rng rng = Rng::root(4).split("ops");
  const Mat a = random_matrix(rng, 3, 4);
  const Mat b = random_matrix(rng, 3, 4);
  const Mat c = random_matrix(rng, 4, 2);
  const Mat pos = (random_matrix(rng, 3, 4).array().abs() + 0.5).matrix();
  const Mat lower = random_lower(rng, 4);
  const Mat rhs = random_matrix(rng, 4, 3);

  auto check = [&](const BuildFn& fn, std::vector<Mat> inputs) {
    CHECK(fd_check(fn, std::move(inputs)) < 1e-4);
  };

  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], v[1])));
  }, {a, b});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::matmul(v[0], v[1]));
  }, {a, c});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::mul(ad::transpose(v[0]), ad::transpose(v[0])));
  }, {a});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::exp(ad::scale(v[0], 0.3)));
  }, {a});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::log(v[0]));
  }, {pos});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::sqrt(v[0]));
  }, {pos});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::softplus(v[0]));
  }, {a});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::colwise_sumsq(v[0]));
  }, {a});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::hstack({v[0], v[1]}));
  }, {a, b});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum_log_diag(ad::tril_factor(v[0]));
  }, {lower});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::tri_solve(v[0], v[1], false));
  }, {lower, rhs});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::tri_solve(v[0], v[1], true));
  }, {lower, rhs});
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::log_softmax_pick(v[0], {1, 0, 1}));
  }, {a});

  // clamp_min away from the threshold
  check([](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::sum(ad::clamp_min(v[0], 0.0));
  }, {pos});
}

TEST_CASE("backward: scalar target required") {
  ad::Tape tape;
  ad::Var x = tape.leaf(Mat::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(x), DimensionMismatch);
}

TEST_CASE("tape: foreign nodes are rejected") {
  ad::Tape t1, t2;
  ad::Var a = t1.leaf(Mat::Ones(1, 1));
  CHECK_THROWS_AS(t2.value(a), GraphCycle);
}

TEST_CASE("gaussian streams: identical seeds give identical draws") {
  Rng a = Rng::root(0).split("eps", 5);
  Rng b = Rng::root(0).split("eps", 5);
  const Mat ma = gaussian_matrix(a, 4, 7);
  const Mat mb = gaussian_matrix(b, 4, 7);
  CHECK((ma - mb).cwiseAbs().maxCoeff() == 0.0);
  Rng c = Rng::root(0).split("eps", 6);
  const Mat mc = gaussian_matrix(c, 4, 7);
  CHECK((ma - mc).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("gaussian streams: shape (2,3) has 6 entries") {
  Rng rng = Rng::root(0);
  const Mat m = gaussian_matrix(rng, 2, 3);
  CHECK(m.size() == 6);
}

TEST_CASE("gaussian streams: moments of 1e6 draws") {
  Rng rng = Rng::root(123).split("moments");
  const Index n = 1000000;
  double sum = 0.0, sumsq = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double x = rng.next_gaussian();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_SUITE_END();
