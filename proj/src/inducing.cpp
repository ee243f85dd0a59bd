#include "cdgp/inducing.hpp"

#include "cdgp/linalg.hpp"
#include "cdgp/patching.hpp"

#include <algorithm>
#include <numeric>

namespace cdgp {

namespace {

Mat sample_rows(const Mat& points, Index cap, Rng rng) {
  if (points.rows() <= cap) return points;
  std::vector<Index> ids(points.rows());
  std::iota(ids.begin(), ids.end(), Index{0});
  for (Index i = 0; i < cap; ++i) {
    const Index j = i + static_cast<Index>(rng.next_below(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(cap);
  std::sort(ids.begin(), ids.end());
  Mat out(cap, points.cols());
  for (Index i = 0; i < cap; ++i) out.row(i) = points.row(ids[i]);
  return out;
}

// Median pairwise squared distance over (at most 500) rows; 0 if degenerate.
double median_squared_distance(const Mat& points) {
  const Index n = std::min<Index>(points.rows(), 500);
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      d2.push_back((points.row(i) - points.row(j)).squaredNorm());
  if (d2.empty()) return 0.0;
  std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
  return d2[d2.size() / 2];
}

Index farthest_point(const Mat& points, const Mat& centroids,
                     const std::vector<int>& assign) {
  Index best = 0;
  double best_d = -1.0;
  for (Index i = 0; i < points.rows(); ++i) {
    const double d = (points.row(i) - centroids.row(assign[i])).squaredNorm();
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(const Mat& points, Index m, Rng rng, int max_iter) {
  const Index n = points.rows();
  if (n < m)
    throw TooFewPoints("kmeans: " + std::to_string(n) + " points for " +
                       std::to_string(m) + " centroids");

  KMeansResult result;
  Mat& c = result.centroids;
  c.resize(m, points.cols());

  // k-means++ seeding
  c.row(0) = points.row(rng.next_below(n));
  Vec mind2 =
      (points.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (Index j = 1; j < m; ++j) {
    const double total = mind2.sum();
    Index pick;
    if (total <= 0.0) {
      pick = static_cast<Index>(rng.next_below(n));
    } else {
      const double r = rng.next_unit() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += mind2(i);
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    c.row(j) = points.row(pick);
    mind2 = mind2.cwiseMin(
        Vec((points.rowwise() - c.row(j)).rowwise().squaredNorm()));
  }

  std::vector<int> assign(n, -1);
  for (int it = 0; it < max_iter; ++it) {
    result.iterations = it + 1;
    const Mat d2 = squared_distances(points, c);
    bool changed = false;
    double wcss = 0.0;
    for (Index i = 0; i < n; ++i) {
      Index best;
      wcss += d2.row(i).minCoeff(&best);
      if (assign[i] != static_cast<int>(best)) {
        assign[i] = static_cast<int>(best);
        changed = true;
      }
    }
    result.wcss_trace.push_back(wcss);
    if (!changed) break;

    Mat sums = Mat::Zero(m, points.cols());
    std::vector<Index> counts(m, 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (Index j = 0; j < m; ++j) {
      if (counts[j] > 0) {
        c.row(j) = sums.row(j) / static_cast<double>(counts[j]);
      } else {
        const Index far = farthest_point(points, c, assign);
        c.row(j) = points.row(far);
      }
    }
  }

  result.counts.assign(m, 0);
  for (int a : assign) ++result.counts[a];

  // Duplicate repair: distinct centroids are required for Kzz conditioning.
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  Rng jitter_rng = rng.split("kmeans_dup_repair");
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < i; ++j) {
      if ((c.row(i) - c.row(j)).cwiseAbs().maxCoeff() <= 1e-12 * scale) {
        const Index far = farthest_point(points, c, assign);
        c.row(i) = points.row(far);
        if ((c.row(i) - c.row(j)).cwiseAbs().maxCoeff() <= 1e-12 * scale) {
          for (Index k = 0; k < c.cols(); ++k)
            c(i, k) += 1e-6 * scale * jitter_rng.next_gaussian();
        }
      }
    }
  }
  return result;
}

Mat top_right_singular_vectors(const Mat& data, Index count) {
  if (count > data.cols())
    throw InvalidSize("requested more singular vectors than columns");
  const Mat gram = data.transpose() * data;
  Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
  if (eig.info() != Eigen::Success)
    throw NotPositiveDefinite("eigendecomposition failed in SVD init");
  Mat w(data.cols(), count);
  // eigenvalues ascend; take the trailing `count` in descending order
  for (Index k = 0; k < count; ++k) {
    Vec v = eig.eigenvectors().col(data.cols() - 1 - k);
    Index imax;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0.0) v = -v;
    w.col(k) = v;
  }
  return w;
}

void initialize_model(DgpModel& model, const Mat& x_train, Rng rng) {
  Mat rep = sample_rows(x_train, kMaxKmeansImages, rng.split("init_subsample"));
  const std::size_t n_layers = model.layers().size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    SvgpLayer& layer = model.layers()[l];
    const Index m = layer.num_inducing();

    if (l > 0) {
      // Hidden representations carry no data-space scale; the configured
      // lengthscale only speaks for the input layer. Median heuristic over
      // the init-pass inputs (patch space for conv layers).
      const Mat scale_probe = layer.spec().is_conv()
                                  ? extract_patches(
                                        rep.topRows(std::min<Index>(
                                            rep.rows(), 64)),
                                        layer.spec().geom)
                                  : rep;
      const double med = median_squared_distance(scale_probe);
      if (med > 0.0)
        layer.log_kappa().value.setConstant(std::log(0.5 * med));
    }

    if (layer.spec().is_conv()) {
      const PatchGeometry& geom = layer.spec().geom;
      const Index p = geom.patch_count();
      Mat pool;
      if (rep.rows() * p <= kMaxKmeansPatches) {
        pool = extract_patches(rep, geom);
      } else {
        Rng pick = rng.split("patch_pool", l);
        std::vector<std::int64_t> ids(rep.rows() * p);
        std::iota(ids.begin(), ids.end(), 0);
        for (Index i = 0; i < kMaxKmeansPatches; ++i) {
          const std::int64_t j =
              i + static_cast<std::int64_t>(pick.next_below(ids.size() - i));
          std::swap(ids[i], ids[j]);
        }
        pool.resize(kMaxKmeansPatches, geom.patch_dim());
        for (Index i = 0; i < kMaxKmeansPatches; ++i) {
          const Index row = static_cast<Index>(ids[i] / p);
          const int patch = static_cast<int>(ids[i] % p);
          const std::vector<int> one{patch};
          pool.row(i) = extract_patches(rep.row(row), geom, &one).row(0);
        }
      }
      if (pool.rows() < m)
        throw TooFewPoints("conv layer " + std::to_string(l) + ": " +
                           std::to_string(pool.rows()) + " patches for M=" +
                           std::to_string(m));
      layer.z().value = kmeans(pool, m, rng.split("kmeans", l)).centroids;
    } else {
      layer.z().value = kmeans(rep, m, rng.split("kmeans", l)).centroids;
      if (layer.mean_function().kind == MeanFunction::Kind::Linear &&
          layer.mean_function().w.size() == 0) {
        MeanFunction mf = layer.mean_function();
        mf.w = top_right_singular_vectors(rep, layer.width());
        layer.set_mean_function(std::move(mf));
      }
    }

    if (l + 1 == n_layers) break;
    if (layer.mean_function().kind == MeanFunction::Kind::Zero) {
      // A zero-mean layer's mean pass is identically zero, which would
      // degenerate the next layer's clustering; use one deterministic
      // reparameterized sample instead.
      SvgpLayer::ValueCtx ctx = layer.prepare();
      Mat mean, var;
      layer.conditional(ctx, rep, &mean, &var, true);
      Rng eps = rng.split("init_sample", l);
      rep = sample_gaussian(mean, var, eps);
    } else {
      rep = layer.mean_function().apply(rep);
    }
  }
}

}  // namespace cdgp
