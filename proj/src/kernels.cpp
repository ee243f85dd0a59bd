#include "cdgp/kernels.hpp"

#include "cdgp/linalg.hpp"

#include <cmath>
#include <memory>
#include <numeric>

namespace cdgp {

namespace {

double rbf_raw(const double* a, const double* b, Index d, double sf2, double kappa) {
  double d2 = 0.0;
  for (Index i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    d2 += diff * diff;
  }
  return sf2 * std::exp(-d2 / (2.0 * kappa));
}

std::vector<int> identity_ids(Index p) {
  std::vector<int> ids(p);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

// Zero the entries of a patch-pair distance matrix that compare a patch with
// itself; both index lists are sorted and distinct.
void zero_same_patch_pairs(Mat& d2, const std::vector<int>& s,
                           const std::vector<int>& sp) {
  std::size_t i = 0, j = 0;
  while (i < s.size() && j < sp.size()) {
    if (s[i] == sp[j]) {
      d2(static_cast<Index>(i), static_cast<Index>(j)) = 0.0;
      ++i;
      ++j;
    } else if (s[i] < sp[j]) {
      ++i;
    } else {
      ++j;
    }
  }
}

struct Components {
  std::vector<double> sf2;
  std::vector<double> kappa;
};

Components components_of(const Mat& log_sf2, const Mat& log_kappa) {
  if (log_sf2.rows() != 1 || log_kappa.rows() != 1 ||
      log_sf2.cols() != log_kappa.cols())
    throw DimensionMismatch("kernel hyperparameters must be 1 x ncomp rows");
  Components c;
  for (Index i = 0; i < log_sf2.cols(); ++i) {
    c.sf2.push_back(std::exp(log_sf2(0, i)));
    c.kappa.push_back(std::exp(log_kappa(0, i)));
  }
  return c;
}

Mat component_kernel(const Mat& d2, double sf2, double kappa) {
  return (sf2 * (-d2.array() / (2.0 * kappa)).exp()).matrix();
}

}  // namespace

// ---- scalar evaluations ----------------------------------------------------

double rbf(const Vec& a, const Vec& b, const RbfParams& p) {
  if (a.size() != b.size())
    throw LengthMismatch("rbf: input lengths " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  return rbf_raw(a.data(), b.data(), a.size(), p.sf2(), p.kappa());
}

double sum_rbf(const Vec& a, const Vec& b, const RbfParams& p1,
               const RbfParams& p2) {
  return rbf(a, b, p1) + rbf(a, b, p2);
}

double conv_kernel(const Vec& x_i, const Vec& x_j, const ConvParams& p) {
  p.geom.validate();
  if (x_i.size() != p.geom.flat_dim() || x_j.size() != p.geom.flat_dim())
    throw GeometryMismatch("conv_kernel: image size does not match geometry");
  const Index np = p.geom.patch_count();
  if (p.weights && p.weights->size() != np)
    throw LengthMismatch("conv_kernel: weight count differs from patch count");

  Mat rows_i(1, x_i.size());
  rows_i.row(0) = x_i.transpose();
  Mat rows_j(1, x_j.size());
  rows_j.row(0) = x_j.transpose();
  const Mat pi = extract_patches(rows_i, p.geom);
  const Mat pj = extract_patches(rows_j, p.geom);

  std::vector<int> all;
  const std::vector<int>* s = p.subset_s ? &p.subset_s->indices : nullptr;
  const std::vector<int>* sp = p.subset_sp ? &p.subset_sp->indices : nullptr;
  if (!s || !sp) all = identity_ids(np);
  if (!s) s = &all;
  if (!sp) sp = &all;

  const Index d = p.geom.patch_dim();
  double acc = 0.0;
  for (int a : *s) {
    for (int b : *sp) {
      double kg = 0.0;
      for (const RbfParams& comp : p.base)
        kg += rbf_raw(pi.row(a).data(), pj.row(b).data(), d, comp.sf2(), comp.kappa());
      if (p.weights) kg *= (*p.weights)(a) * (*p.weights)(b);
      acc += kg;
    }
  }
  return acc;
}

// ---- value-level builders ---------------------------------------------------

namespace {
void mirror_lower(Mat& k) {
  for (Index i = 0; i < k.rows(); ++i)
    for (Index j = 0; j < i; ++j) k(j, i) = k(i, j);
}
}  // namespace

Mat kzz_value(const Mat& v, const KernelValues& kv) {
  const Components c = components_of(kv.log_sf2, kv.log_kappa);
  const Mat d2 = squared_distances(v, v, true);
  Mat k = Mat::Zero(v.rows(), v.rows());
  for (std::size_t i = 0; i < c.sf2.size(); ++i)
    k += component_kernel(d2, c.sf2[i], c.kappa[i]);
  k.diagonal().array() += std::exp(kv.log_sn2(0, 0));
  mirror_lower(k);
  return k;
}

namespace {

Mat conv_kfz_value(const Mat& x, const Mat& z, const Components& c,
                   const Mat& weights, const KernelSpec& spec) {
  spec.geom.validate();
  if (x.cols() != spec.geom.flat_dim())
    throw GeometryMismatch("kfz: input rows do not match patch geometry");
  if (z.cols() != spec.geom.patch_dim())
    throw DimensionMismatch("kfz: inducing rows must live in patch space");
  const std::vector<int>* ids = spec.s_ids();
  std::vector<int> all;
  if (!ids) {
    all = identity_ids(spec.geom.patch_count());
    ids = &all;
  }
  const Mat patches = extract_patches(x, spec.geom, ids);
  const Mat d2 = squared_distances(patches, z);
  const Index ns = static_cast<Index>(ids->size());
  Mat out = Mat::Zero(x.rows(), z.rows());
  for (std::size_t ci = 0; ci < c.sf2.size(); ++ci) {
    const Mat kc = component_kernel(d2, c.sf2[ci], c.kappa[ci]);
    for (Index n = 0; n < x.rows(); ++n) {
      for (Index s = 0; s < ns; ++s) {
        if (weights.size() > 0)
          out.row(n) += weights((*ids)[s], 0) * kc.row(n * ns + s);
        else
          out.row(n) += kc.row(n * ns + s);
      }
    }
  }
  return out;
}

}  // namespace

Mat kfz_value(const Mat& x, const Mat& z, const KernelValues& kv,
              const KernelSpec& spec) {
  const Components c = components_of(kv.log_sf2, kv.log_kappa);
  if (!spec.is_conv()) {
    if (x.cols() != z.cols())
      throw DimensionMismatch("kfz: input dims of X and Z differ");
    const Mat d2 = squared_distances(x, z);
    Mat out = Mat::Zero(x.rows(), z.rows());
    for (std::size_t i = 0; i < c.sf2.size(); ++i)
      out += component_kernel(d2, c.sf2[i], c.kappa[i]);
    return out;
  }
  return conv_kfz_value(x, z, c, kv.weights, spec);
}

Mat kff_diag_value(const Mat& x, const KernelValues& kv, const KernelSpec& spec) {
  if (x.rows() == 0) throw InvalidSize("kff_diag: empty batch");
  const Components c = components_of(kv.log_sf2, kv.log_kappa);
  const double sn2 = std::exp(kv.log_sn2(0, 0));
  if (!spec.is_conv()) {
    const double total = std::accumulate(c.sf2.begin(), c.sf2.end(), 0.0) + sn2;
    return Mat::Constant(x.rows(), 1, total);
  }
  spec.geom.validate();
  if (x.cols() != spec.geom.flat_dim())
    throw GeometryMismatch("kff_diag: input rows do not match patch geometry");
  std::vector<int> all;
  const std::vector<int>* s = spec.s_ids();
  const std::vector<int>* sp = spec.sp_ids();
  if (!s || !sp) all = identity_ids(spec.geom.patch_count());
  if (!s) s = &all;
  if (!sp) sp = &all;

  Mat out(x.rows(), 1);
  for (Index n = 0; n < x.rows(); ++n) {
    const Mat row = x.row(n);
    const Mat a = extract_patches(row, spec.geom, s);
    const Mat b = (s == sp) ? a : extract_patches(row, spec.geom, sp);
    Mat d2 = squared_distances(a, b);
    zero_same_patch_pairs(d2, *s, *sp);
    // one reduction path for both variants so unit weights stay bit-exact
    Vec wa = Vec::Ones(a.rows()), wb = Vec::Ones(b.rows());
    if (kv.weights.size() > 0) {
      for (Index i = 0; i < a.rows(); ++i) wa(i) = kv.weights((*s)[i], 0);
      for (Index j = 0; j < b.rows(); ++j) wb(j) = kv.weights((*sp)[j], 0);
    }
    double acc = 0.0;
    for (std::size_t ci = 0; ci < c.sf2.size(); ++ci) {
      const Mat kc = component_kernel(d2, c.sf2[ci], c.kappa[ci]);
      acc += wa.dot(kc * wb);
    }
    out(n, 0) = acc + sn2;
  }
  return out;
}

// ---- tape builders ----------------------------------------------------------

namespace {

using ad::Tape;
using ad::Var;

struct HyperGrads {
  Mat dls;
  Mat dlk;

  explicit HyperGrads(int ncomp) {
    dls = Mat::Zero(1, ncomp);
    dlk = Mat::Zero(1, ncomp);
  }
};

Components components_at(Tape& t, const KernelVars& kv) {
  return components_of(t.value(kv.log_sf2), t.value(kv.log_kappa));
}

}  // namespace

ad::Var kzz_node(Tape& tape, Var v, const KernelVars& kv) {
  const Mat& vv = v.value();
  const Components c = components_at(tape, kv);
  const int ncomp = static_cast<int>(c.sf2.size());
  auto d2 = std::make_shared<Mat>(squared_distances(vv, vv, true));
  auto kcs = std::make_shared<std::vector<Mat>>();
  Mat k = Mat::Zero(vv.rows(), vv.rows());
  for (int ci = 0; ci < ncomp; ++ci) {
    kcs->push_back(component_kernel(*d2, c.sf2[ci], c.kappa[ci]));
    k += kcs->back();
  }
  k.diagonal().array() += std::exp(tape.value(kv.log_sn2)(0, 0));
  mirror_lower(k);

  return tape.node(
      std::move(k), {v, kv.log_sf2, kv.log_kappa, kv.log_sn2},
      [v, kv, d2, kcs](Tape& t, const Mat& g) {
        const Components c = components_at(t, kv);
        const int ncomp = static_cast<int>(c.sf2.size());
        HyperGrads hg(ncomp);
        Mat dv;
        const bool need_dv = t.requires_grad(v);
        if (need_dv) dv = Mat::Zero(t.value(v).rows(), t.value(v).cols());
        for (int ci = 0; ci < ncomp; ++ci) {
          const Mat w = g.cwiseProduct((*kcs)[ci]);
          hg.dls(0, ci) = w.sum();
          hg.dlk(0, ci) = w.cwiseProduct(*d2).sum() / (2.0 * c.kappa[ci]);
          if (need_dv) {
            const Mat ws = w + w.transpose();
            const Vec rs = ws.rowwise().sum();
            dv += (ws * t.value(v) - rs.asDiagonal() * t.value(v)) / c.kappa[ci];
          }
        }
        t.accumulate(kv.log_sf2, hg.dls);
        t.accumulate(kv.log_kappa, hg.dlk);
        Mat dsn(1, 1);
        dsn(0, 0) = std::exp(t.value(kv.log_sn2)(0, 0)) * g.trace();
        t.accumulate(kv.log_sn2, dsn);
        if (need_dv) t.accumulate(v, dv);
      });
}

namespace {

Var kfz_rbf_node(Tape& tape, Var x, Var z, const KernelVars& kv) {
  const Mat& xv = x.value();
  const Mat& zv = z.value();
  if (xv.cols() != zv.cols())
    throw DimensionMismatch("kfz: input dims of X and Z differ");
  const Components c = components_at(tape, kv);
  const int ncomp = static_cast<int>(c.sf2.size());
  auto d2 = std::make_shared<Mat>(squared_distances(xv, zv));
  auto kcs = std::make_shared<std::vector<Mat>>();
  Mat k = Mat::Zero(xv.rows(), zv.rows());
  for (int ci = 0; ci < ncomp; ++ci) {
    kcs->push_back(component_kernel(*d2, c.sf2[ci], c.kappa[ci]));
    k += kcs->back();
  }
  return tape.node(
      std::move(k), {x, z, kv.log_sf2, kv.log_kappa},
      [x, z, kv, d2, kcs](Tape& t, const Mat& g) {
        const Components c = components_at(t, kv);
        const int ncomp = static_cast<int>(c.sf2.size());
        HyperGrads hg(ncomp);
        const bool need_dx = t.requires_grad(x);
        const bool need_dz = t.requires_grad(z);
        Mat dx, dz;
        if (need_dx) dx = Mat::Zero(t.value(x).rows(), t.value(x).cols());
        if (need_dz) dz = Mat::Zero(t.value(z).rows(), t.value(z).cols());
        for (int ci = 0; ci < ncomp; ++ci) {
          const Mat w = g.cwiseProduct((*kcs)[ci]);
          hg.dls(0, ci) = w.sum();
          hg.dlk(0, ci) = w.cwiseProduct(*d2).sum() / (2.0 * c.kappa[ci]);
          if (need_dx) {
            const Vec rs = w.rowwise().sum();
            dx += (w * t.value(z) - rs.asDiagonal() * t.value(x)) / c.kappa[ci];
          }
          if (need_dz) {
            const Vec cs = w.colwise().sum();
            dz += (w.transpose() * t.value(x) - cs.asDiagonal() * t.value(z)) /
                  c.kappa[ci];
          }
        }
        t.accumulate(kv.log_sf2, hg.dls);
        t.accumulate(kv.log_kappa, hg.dlk);
        if (need_dx) t.accumulate(x, dx);
        if (need_dz) t.accumulate(z, dz);
      });
}

Var kfz_conv_node(Tape& tape, Var x, Var z, const KernelVars& kv,
                  const KernelSpec& spec) {
  spec.geom.validate();
  const Mat& xv = x.value();
  const Mat& zv = z.value();
  if (xv.cols() != spec.geom.flat_dim())
    throw GeometryMismatch("kfz: input rows do not match patch geometry");
  if (zv.cols() != spec.geom.patch_dim())
    throw DimensionMismatch("kfz: inducing rows must live in patch space");

  auto ids = std::make_shared<std::vector<int>>(
      spec.s_ids() ? *spec.s_ids() : identity_ids(spec.geom.patch_count()));
  const Index ns = static_cast<Index>(ids->size());
  const Index b = xv.rows();
  const Index m = zv.rows();
  const bool weighted = spec.weighted();
  if (weighted && tape.value(kv.weights).rows() != spec.geom.patch_count())
    throw LengthMismatch("kfz: weight count differs from patch count");

  const Components c = components_at(tape, kv);
  const int ncomp = static_cast<int>(c.sf2.size());
  auto patches = std::make_shared<Mat>(extract_patches(xv, spec.geom, ids.get()));
  Mat d2 = squared_distances(*patches, zv);

  auto kcs = std::make_shared<std::vector<Mat>>();      // base kernel, per comp
  auto contrib = std::make_shared<std::vector<Mat>>();  // weighted patch sums
  auto tks = std::make_shared<std::vector<Mat>>();      // d(contrib)/dlog_kappa
  Mat out = Mat::Zero(b, m);
  for (int ci = 0; ci < ncomp; ++ci) {
    kcs->push_back(component_kernel(d2, c.sf2[ci], c.kappa[ci]));
    const Mat& kc = kcs->back();
    const Mat kd = kc.cwiseProduct(d2) / (2.0 * c.kappa[ci]);
    Mat cm = Mat::Zero(b, m);
    Mat tm = Mat::Zero(b, m);
    for (Index n = 0; n < b; ++n) {
      for (Index s = 0; s < ns; ++s) {
        const double w =
            weighted ? tape.value(kv.weights)((*ids)[s], 0) : 1.0;
        if (weighted) {
          cm.row(n) += w * kc.row(n * ns + s);
          tm.row(n) += w * kd.row(n * ns + s);
        } else {
          cm.row(n) += kc.row(n * ns + s);
          tm.row(n) += kd.row(n * ns + s);
        }
      }
    }
    contrib->push_back(std::move(cm));
    tks->push_back(std::move(tm));
    out += contrib->back();
  }

  std::vector<Var> parents = {x, z, kv.log_sf2, kv.log_kappa};
  if (weighted) parents.push_back(kv.weights);
  const PatchGeometry geom = spec.geom;
  return tape.node(
      std::move(out), parents,
      [x, z, kv, ids, patches, kcs, contrib, tks, weighted, geom](Tape& t,
                                                                  const Mat& g) {
        const Components c = components_at(t, kv);
        const int ncomp = static_cast<int>(c.sf2.size());
        const Index ns = static_cast<Index>(ids->size());
        const Index b = g.rows();
        HyperGrads hg(ncomp);
        for (int ci = 0; ci < ncomp; ++ci) {
          hg.dls(0, ci) = g.cwiseProduct((*contrib)[ci]).sum();
          hg.dlk(0, ci) = g.cwiseProduct((*tks)[ci]).sum();
        }
        t.accumulate(kv.log_sf2, hg.dls);
        t.accumulate(kv.log_kappa, hg.dlk);

        const bool need_dw = weighted && t.requires_grad(kv.weights);
        const bool need_dz = t.requires_grad(z);
        const bool need_dx = t.requires_grad(x);
        if (need_dw) {
          Mat dw = Mat::Zero(t.value(kv.weights).rows(), 1);
          for (int ci = 0; ci < ncomp; ++ci) {
            const Mat& kc = (*kcs)[ci];
            for (Index n = 0; n < b; ++n)
              for (Index s = 0; s < ns; ++s)
                dw((*ids)[s], 0) += kc.row(n * ns + s).dot(g.row(n));
          }
          t.accumulate(kv.weights, dw);
        }
        if (need_dz || need_dx) {
          const Mat& zv = t.value(z);
          Mat dz, dpatch;
          if (need_dz) dz = Mat::Zero(zv.rows(), zv.cols());
          if (need_dx) dpatch = Mat::Zero(patches->rows(), patches->cols());
          for (int ci = 0; ci < ncomp; ++ci) {
            Mat w = (*kcs)[ci];
            for (Index n = 0; n < b; ++n)
              for (Index s = 0; s < ns; ++s) {
                const double wp =
                    weighted ? t.value(kv.weights)((*ids)[s], 0) : 1.0;
                w.row(n * ns + s) =
                    wp * w.row(n * ns + s).cwiseProduct(g.row(n));
              }
            if (need_dz) {
              const Vec cs = w.colwise().sum();
              dz += (w.transpose() * (*patches) - cs.asDiagonal() * zv) /
                    c.kappa[ci];
            }
            if (need_dx) {
              const Vec rs = w.rowwise().sum();
              dpatch += (w * zv - rs.asDiagonal() * (*patches)) / c.kappa[ci];
            }
          }
          if (need_dz) t.accumulate(z, dz);
          if (need_dx)
            t.accumulate(x, scatter_patches(dpatch, b, geom, ids.get()));
        }
      });
}

Var kff_conv_node(Tape& tape, Var x, const KernelVars& kv,
                  const KernelSpec& spec) {
  spec.geom.validate();
  const Mat& xv = x.value();
  if (xv.cols() != spec.geom.flat_dim())
    throw GeometryMismatch("kff_diag: input rows do not match patch geometry");
  auto s = std::make_shared<std::vector<int>>(
      spec.s_ids() ? *spec.s_ids() : identity_ids(spec.geom.patch_count()));
  auto sp = std::make_shared<std::vector<int>>(
      spec.sp_ids() ? *spec.sp_ids() : identity_ids(spec.geom.patch_count()));
  const bool weighted = spec.weighted();
  const Index b = xv.rows();
  const Index ns = static_cast<Index>(s->size());
  const Index nsp = static_cast<Index>(sp->size());
  const Components c = components_at(tape, kv);
  const int ncomp = static_cast<int>(c.sf2.size());
  const double sn2 = std::exp(tape.value(kv.log_sn2)(0, 0));

  Vec ws = Vec::Ones(ns), wsp = Vec::Ones(nsp);
  if (weighted) {
    const Mat& wv = tape.value(kv.weights);
    if (wv.rows() != spec.geom.patch_count())
      throw LengthMismatch("kff_diag: weight count differs from patch count");
    for (Index i = 0; i < ns; ++i) ws(i) = wv((*s)[i], 0);
    for (Index j = 0; j < nsp; ++j) wsp(j) = wv((*sp)[j], 0);
  }

  auto sc = std::make_shared<Mat>(Mat::Zero(b, ncomp));   // per-comp sums
  auto tc = std::make_shared<Mat>(Mat::Zero(b, ncomp));   // kappa reduction
  auto rc = std::make_shared<Mat>(Mat::Zero(b, ns));      // S-side row sums
  auto rpc = std::make_shared<Mat>(Mat::Zero(b, nsp));    // S'-side col sums
  Mat out(b, 1);
  for (Index n = 0; n < b; ++n) {
    const Mat row = xv.row(n);
    const Mat a = extract_patches(row, spec.geom, s.get());
    const Mat bm = (*s == *sp) ? a : extract_patches(row, spec.geom, sp.get());
    Mat d2 = squared_distances(a, bm);
    zero_same_patch_pairs(d2, *s, *sp);
    double total = 0.0;
    for (int ci = 0; ci < ncomp; ++ci) {
      const Mat kc = component_kernel(d2, c.sf2[ci], c.kappa[ci]);
      const Vec rowsum = kc * wsp;          // weighted over S'
      const Vec colsum = kc.transpose() * ws;  // weighted over S
      (*sc)(n, ci) = ws.dot(rowsum);
      (*tc)(n, ci) =
          ws.dot(Vec(kc.cwiseProduct(d2) * wsp)) / (2.0 * c.kappa[ci]);
      rc->row(n) += rowsum.transpose();
      rpc->row(n) += colsum.transpose();
      total += (*sc)(n, ci);
    }
    out(n, 0) = total + sn2;
  }

  std::vector<Var> parents = {x, kv.log_sf2, kv.log_kappa, kv.log_sn2};
  if (weighted) parents.push_back(kv.weights);
  const PatchGeometry geom = spec.geom;
  return tape.node(
      std::move(out), parents,
      [x, kv, s, sp, sc, tc, rc, rpc, weighted, geom](Tape& t, const Mat& g) {
        const Components c = components_at(t, kv);
        const int ncomp = static_cast<int>(c.sf2.size());
        const Index b = g.rows();
        HyperGrads hg(ncomp);
        for (int ci = 0; ci < ncomp; ++ci) {
          hg.dls(0, ci) = g.col(0).dot(sc->col(ci));
          hg.dlk(0, ci) = g.col(0).dot(tc->col(ci));
        }
        t.accumulate(kv.log_sf2, hg.dls);
        t.accumulate(kv.log_kappa, hg.dlk);
        Mat dsn(1, 1);
        dsn(0, 0) = std::exp(t.value(kv.log_sn2)(0, 0)) * g.sum();
        t.accumulate(kv.log_sn2, dsn);

        if (weighted && t.requires_grad(kv.weights)) {
          Mat dw = Mat::Zero(t.value(kv.weights).rows(), 1);
          for (Index n = 0; n < b; ++n) {
            for (Index i = 0; i < rc->cols(); ++i)
              dw((*s)[i], 0) += g(n, 0) * (*rc)(n, i);
            for (Index j = 0; j < rpc->cols(); ++j)
              dw((*sp)[j], 0) += g(n, 0) * (*rpc)(n, j);
          }
          t.accumulate(kv.weights, dw);
        }

        if (t.requires_grad(x)) {
          // Recompute the per-image patch grams; cheaper than holding B of
          // them through the forward pass.
          const Mat& xv = t.value(x);
          const Index ns = static_cast<Index>(s->size());
          const Index nsp = static_cast<Index>(sp->size());
          Vec ws = Vec::Ones(ns), wsp = Vec::Ones(nsp);
          if (weighted) {
            const Mat& wv = t.value(kv.weights);
            for (Index i = 0; i < ns; ++i) ws(i) = wv((*s)[i], 0);
            for (Index j = 0; j < nsp; ++j) wsp(j) = wv((*sp)[j], 0);
          }
          Mat da_all = Mat::Zero(b * ns, geom.patch_dim());
          Mat db_all = Mat::Zero(b * nsp, geom.patch_dim());
          for (Index n = 0; n < b; ++n) {
            const Mat row = xv.row(n);
            const Mat a = extract_patches(row, geom, s.get());
            const Mat bm =
                (*s == *sp) ? a : extract_patches(row, geom, sp.get());
            Mat d2 = squared_distances(a, bm);
            zero_same_patch_pairs(d2, *s, *sp);
            for (int ci = 0; ci < ncomp; ++ci) {
              Mat w = component_kernel(d2, c.sf2[ci], c.kappa[ci]);
              w = g(n, 0) * (ws * wsp.transpose()).cwiseProduct(w);
              const Vec rs = w.rowwise().sum();
              const Vec cs = w.colwise().sum();
              da_all.middleRows(n * ns, ns) +=
                  (w * bm - rs.asDiagonal() * a) / c.kappa[ci];
              db_all.middleRows(n * nsp, nsp) +=
                  (w.transpose() * a - cs.asDiagonal() * bm) / c.kappa[ci];
            }
          }
          Mat dx = scatter_patches(da_all, b, geom, s.get());
          dx += scatter_patches(db_all, b, geom, sp.get());
          t.accumulate(x, dx);
        }
      });
}

}  // namespace

ad::Var kfz_node(Tape& tape, Var x, Var z, const KernelVars& kv,
                 const KernelSpec& spec) {
  if (spec.is_conv()) return kfz_conv_node(tape, x, z, kv, spec);
  return kfz_rbf_node(tape, x, z, kv);
}

ad::Var kff_diag_node(Tape& tape, Var x, const KernelVars& kv,
                      const KernelSpec& spec) {
  if (x.value().rows() == 0) throw InvalidSize("kff_diag: empty batch");
  if (spec.is_conv()) return kff_conv_node(tape, x, kv, spec);

  const Components c = components_at(tape, kv);
  const double sn2 = std::exp(tape.value(kv.log_sn2)(0, 0));
  const double total = std::accumulate(c.sf2.begin(), c.sf2.end(), 0.0) + sn2;
  Mat out = Mat::Constant(x.value().rows(), 1, total);
  return tape.node(std::move(out), {x, kv.log_sf2, kv.log_sn2},
                   [kv](Tape& t, const Mat& g) {
                     const double gsum = g.sum();
                     Mat dls = Mat::Zero(1, t.value(kv.log_sf2).cols());
                     for (Index i = 0; i < dls.cols(); ++i)
                       dls(0, i) = std::exp(t.value(kv.log_sf2)(0, i)) * gsum;
                     t.accumulate(kv.log_sf2, dls);
                     Mat dsn(1, 1);
                     dsn(0, 0) = std::exp(t.value(kv.log_sn2)(0, 0)) * gsum;
                     t.accumulate(kv.log_sn2, dsn);
                   });
}

}  // namespace cdgp
