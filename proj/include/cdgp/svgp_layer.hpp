#pragma once

#include "cdgp/kernels.hpp"
#include "cdgp/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace cdgp {

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  void zero_grad() { grad = Mat::Zero(value.rows(), value.cols()); }
};

struct MeanFunction {
  enum class Kind { Zero, Identity, Linear };
  Kind kind = Kind::Zero;
  Mat w;  // d_in x width, Linear only

  Mat apply(const Mat& f) const;
  ad::Var apply(ad::Tape& tape, ad::Var f) const;  // invalid handle for Zero
};

inline constexpr double kVarianceFloor = 1e-12;

// Draw from N(mean, diag(var)) via the reparameterization F = m + eps*sqrt(v).
Mat sample_gaussian(const Mat& mean, const Mat& var, Rng& rng);

// One sparse variational GP layer. Kernel hyperparameters are shared across
// the layer's outputs; each output j keeps its own q(u_j) = N(m_j, L_j L_j^T).
class SvgpLayer {
 public:
  SvgpLayer(int index, KernelSpec spec, Index input_dim, Index width,
            Index num_inducing, MeanFunction mean, bool trainable_z,
            double lengthscale_init = 2.0, double lengthscale_init2 = 10.0);

  // ---- tape path (training) ----
  struct TapeCtx {
    KernelVars kv;
    ad::Var z;
    ad::Var m;
    std::vector<ad::Var> l;  // positive-diagonal factors, one per output
    ad::Var kzz;
    ad::Var lz;
    double jitter = 0.0;
    ad::Var mean_z;  // invalid when the prior mean at Z is zero
    std::vector<std::pair<Parameter*, ad::Var>> bindings;
  };

  TapeCtx build(ad::Tape& tape);
  std::pair<ad::Var, ad::Var> conditional(ad::Tape& tape, const TapeCtx& ctx,
                                          ad::Var fprev, bool clamp = true) const;
  ad::Var kl(ad::Tape& tape, const TapeCtx& ctx) const;

  // ---- value path (prediction / initialization) ----
  struct ValueCtx {
    Mat lz;
    Mat kzz_eff;  // Kzz + sn2*I + jitter*I, the effective prior covariance
    double jitter = 0.0;
    Mat mean_z;  // empty when zero
    Mat beta;    // Kzz_eff^{-1} (m - mean_z), M x width
  };

  ValueCtx prepare() const;
  void conditional(const ValueCtx& ctx, const Mat& fprev, Mat* mean, Mat* var,
                   bool clamp = true) const;
  double kl() const;

  KernelValues kernel_values() const;
  Mat factor_value(Index j) const;  // L_j with softplus-positive diagonal

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> trainable_parameters();

  const KernelSpec& spec() const { return spec_; }
  KernelSpec& mutable_spec() { return spec_; }
  Index input_dim() const { return input_dim_; }
  Index width() const { return width_; }
  Index num_inducing() const { return m_.value.rows(); }
  int index() const { return index_; }
  const MeanFunction& mean_function() const { return mean_; }
  void set_mean_function(MeanFunction m) { mean_ = std::move(m); }
  bool trainable_z() const { return trainable_z_; }

  Parameter& z() { return z_; }
  Parameter& inducing_mean() { return m_; }
  Parameter& raw_factor(Index j) { return l_raw_[j]; }
  Parameter& log_sf2() { return log_sf2_; }
  Parameter& log_kappa() { return log_kappa_; }
  Parameter& log_sn2() { return log_sn2_; }
  Parameter& patch_weights() { return weights_; }

 private:
  int index_;
  KernelSpec spec_;
  Index input_dim_;
  Index width_;
  MeanFunction mean_;
  bool trainable_z_;

  Parameter log_sf2_, log_kappa_, log_sn2_, weights_, z_, m_;
  std::vector<Parameter> l_raw_;
};

// Closed-form KL(N(m, S) || N(mu0, K)) from Cholesky factors of S and K.
double gaussian_kl(const Mat& lk, const Mat& m, const Mat& mu0, const Mat& ls);

double softplus_inverse(double y);

}  // namespace cdgp
