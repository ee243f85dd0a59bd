#pragma once

#include "cdgp/common.hpp"
#include "cdgp/patching.hpp"
#include "cdgp/tape.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace cdgp {

// Positive hyperparameters live on the log scale; kappa is the squared
// lengthscale in sf2 * exp(-||a-b||^2 / (2*kappa)).
struct RbfParams {
  double log_sf2 = 0.0;
  double log_kappa = 0.0;

  double sf2() const { return std::exp(log_sf2); }
  double kappa() const { return std::exp(log_kappa); }
};

struct ConvParams {
  std::vector<RbfParams> base;  // one or two RBF components
  PatchGeometry geom;
  std::optional<Vec> weights;  // per-patch, length P
  std::optional<PatchSubset> subset_s;
  std::optional<PatchSubset> subset_sp;
  double log_sn2 = -std::numeric_limits<double>::infinity();

  double sn2() const { return std::exp(log_sn2); }
};

enum class KernelKind { Rbf, SumRbf, Conv, WConv };

struct KernelSpec {
  KernelKind kind = KernelKind::Rbf;
  int components = 1;  // 2 selects the sum-of-two-RBF (base) kernel
  PatchGeometry geom;  // Conv/WConv only
  std::optional<PatchSubset> subset_s;
  std::optional<PatchSubset> subset_sp;

  bool is_conv() const {
    return kind == KernelKind::Conv || kind == KernelKind::WConv;
  }
  bool weighted() const { return kind == KernelKind::WConv; }
  const std::vector<int>* s_ids() const {
    return subset_s ? &subset_s->indices : nullptr;
  }
  const std::vector<int>* sp_ids() const {
    return subset_sp ? &subset_sp->indices : nullptr;
  }
};

// ---- scalar kernel evaluations --------------------------------------------

double rbf(const Vec& a, const Vec& b, const RbfParams& p);
double sum_rbf(const Vec& a, const Vec& b, const RbfParams& p1, const RbfParams& p2);

// Double loop over patch pairs (ascending p, then p'); applies weights and
// subset restrictions when present. No noise term.
double conv_kernel(const Vec& x_i, const Vec& x_j, const ConvParams& p);

// ---- value-level matrix builders (prediction path, bench, k-means) --------

// Hyperparameter values in matrix form: log_sf2/log_kappa are 1 x ncomp,
// log_sn2 is 1x1, weights (optional) is P x 1.
struct KernelValues {
  Mat log_sf2;
  Mat log_kappa;
  Mat log_sn2;
  Mat weights;  // empty when unweighted

  int ncomp() const { return static_cast<int>(log_sf2.cols()); }
};

// M x M base-kernel gram over V plus sn2 on the diagonal (diagonal entries
// are exactly sum(sf2) + sn2).
Mat kzz_value(const Mat& v, const KernelValues& kv);

// |X| x M cross covariance; for conv kernels Z lives in patch space.
Mat kfz_value(const Mat& x, const Mat& z, const KernelValues& kv,
              const KernelSpec& spec);

// Per-point k(x_n, x_n) + sn2 as a B x 1 column.
Mat kff_diag_value(const Mat& x, const KernelValues& kv, const KernelSpec& spec);

// ---- tape builders ---------------------------------------------------------

struct KernelVars {
  ad::Var log_sf2;
  ad::Var log_kappa;
  ad::Var log_sn2;
  ad::Var weights;  // invalid handle when unweighted
};

ad::Var kzz_node(ad::Tape& tape, ad::Var v, const KernelVars& kv);
ad::Var kfz_node(ad::Tape& tape, ad::Var x, ad::Var z, const KernelVars& kv,
                 const KernelSpec& spec);
ad::Var kff_diag_node(ad::Tape& tape, ad::Var x, const KernelVars& kv,
                      const KernelSpec& spec);

}  // namespace cdgp
