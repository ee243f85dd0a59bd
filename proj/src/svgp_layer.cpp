#include "cdgp/svgp_layer.hpp"

#include "cdgp/linalg.hpp"

#include <cmath>

namespace cdgp {

Mat MeanFunction::apply(const Mat& f) const {
  switch (kind) {
    case Kind::Zero:
      return Mat::Zero(f.rows(), w.cols() > 0 ? w.cols() : f.cols());
    case Kind::Identity:
      return f;
    case Kind::Linear:
      if (f.cols() != w.rows())
        throw DimensionMismatch("mean function: input dim does not match map");
      return f * w;
  }
  throw Error(ErrorCategory::Numeric, "Internal", "bad mean kind");
}

ad::Var MeanFunction::apply(ad::Tape& tape, ad::Var f) const {
  switch (kind) {
    case Kind::Zero:
      return ad::Var{};
    case Kind::Identity:
      return f;
    case Kind::Linear:
      return ad::matmul(f, tape.constant(w));
  }
  throw Error(ErrorCategory::Numeric, "Internal", "bad mean kind");
}

Mat sample_gaussian(const Mat& mean, const Mat& var, Rng& rng) {
  if (mean.rows() != var.rows() || mean.cols() != var.cols())
    throw DimensionMismatch("sample: mean and variance shapes differ");
  if ((var.array() < -1e-12).any())
    throw NegativeVariance("sample: variance below -1e-12");
  const Mat eps = gaussian_matrix(rng, mean.rows(), mean.cols());
  return mean + eps.cwiseProduct(var.cwiseMax(0.0).cwiseSqrt());
}

double softplus_inverse(double y) {
  // log(exp(y) - 1), stable for small y
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

SvgpLayer::SvgpLayer(int index, KernelSpec spec, Index input_dim, Index width,
                     Index num_inducing, MeanFunction mean, bool trainable_z,
                     double lengthscale_init, double lengthscale_init2)
    : index_(index),
      spec_(std::move(spec)),
      input_dim_(input_dim),
      width_(width),
      mean_(std::move(mean)),
      trainable_z_(trainable_z) {
  if (width <= 0 || input_dim <= 0 || num_inducing <= 0)
    throw InvalidSize("layer dimensions must be positive");
  if (spec_.is_conv()) spec_.geom.validate();
  const int ncomp = spec_.components;
  if (ncomp < 1 || ncomp > 2)
    throw ConfigError("base kernel must have one or two components");

  const std::string prefix = "layer" + std::to_string(index) + "/";
  log_sf2_ = {prefix + "log_sf2", Mat::Zero(1, ncomp), Mat(), true};
  Mat lk(1, ncomp);
  lk(0, 0) = std::log(lengthscale_init * lengthscale_init);
  if (ncomp == 2) lk(0, 1) = std::log(lengthscale_init2 * lengthscale_init2);
  log_kappa_ = {prefix + "log_kappa", lk, Mat(), true};
  // sn2 starts at 1e-2 * sf2
  log_sn2_ = {prefix + "log_sn2", Mat::Constant(1, 1, std::log(1e-2)), Mat(), true};

  if (spec_.weighted())
    weights_ = {prefix + "weights", Mat::Ones(spec_.geom.patch_count(), 1), Mat(),
                true};
  else
    weights_ = {prefix + "weights", Mat(), Mat(), false};

  const Index dz = spec_.is_conv() ? spec_.geom.patch_dim() : input_dim;
  z_ = {prefix + "Z", Mat::Zero(num_inducing, dz), Mat(), trainable_z};
  m_ = {prefix + "m", Mat::Zero(num_inducing, width), Mat(), true};

  // S_j = 1e-5 * I at initialization
  const double raw_diag = softplus_inverse(std::sqrt(1e-5));
  for (Index j = 0; j < width; ++j) {
    Mat raw = Mat::Zero(num_inducing, num_inducing);
    raw.diagonal().setConstant(raw_diag);
    l_raw_.push_back(
        {prefix + "L" + std::to_string(j), std::move(raw), Mat(), true});
  }
}

KernelValues SvgpLayer::kernel_values() const {
  return KernelValues{log_sf2_.value, log_kappa_.value, log_sn2_.value,
                      weights_.value};
}

Mat SvgpLayer::factor_value(Index j) const {
  const Mat& raw = l_raw_[j].value;
  Mat l = raw.triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < raw.rows(); ++i) l(i, i) = ad::softplus_value(raw(i, i));
  return l;
}

std::vector<Parameter*> SvgpLayer::parameters() {
  std::vector<Parameter*> out = {&log_sf2_, &log_kappa_, &log_sn2_, &z_, &m_};
  if (weights_.value.size() > 0) out.push_back(&weights_);
  for (Parameter& p : l_raw_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> SvgpLayer::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

SvgpLayer::TapeCtx SvgpLayer::build(ad::Tape& tape) {
  TapeCtx ctx;
  auto bind = [&](Parameter& p) -> ad::Var {
    if (p.trainable) {
      ad::Var v = tape.leaf(p.value);
      ctx.bindings.emplace_back(&p, v);
      return v;
    }
    return tape.constant(p.value);
  };
  ctx.kv.log_sf2 = bind(log_sf2_);
  ctx.kv.log_kappa = bind(log_kappa_);
  ctx.kv.log_sn2 = bind(log_sn2_);
  if (weights_.value.size() > 0) ctx.kv.weights = bind(weights_);
  ctx.z = bind(z_);
  ctx.m = bind(m_);
  for (Parameter& raw : l_raw_) ctx.l.push_back(ad::tril_factor(bind(raw)));

  ctx.kzz = kzz_node(tape, ctx.z, ctx.kv);
  ctx.lz = ad::cholesky(ctx.kzz, &ctx.jitter);
  if (!spec_.is_conv() && mean_.kind != MeanFunction::Kind::Zero)
    ctx.mean_z = mean_.apply(tape, ctx.z);
  return ctx;
}

std::pair<ad::Var, ad::Var> SvgpLayer::conditional(ad::Tape& tape,
                                                   const TapeCtx& ctx,
                                                   ad::Var fprev,
                                                   bool clamp) const {
  namespace a = ad;
  a::Var kfz = kfz_node(tape, fprev, ctx.z, ctx.kv, spec_);
  a::Var kff = kff_diag_node(tape, fprev, ctx.kv, spec_);

  a::Var at = a::tri_solve(ctx.lz, a::transpose(kfz), false);  // M x B
  a::Var qf = a::colwise_sumsq(at);                            // 1 x B
  a::Var ct = a::tri_solve(ctx.lz, at, true);                  // M x B

  a::Var delta = ctx.mean_z.valid() ? a::sub(ctx.m, ctx.mean_z) : ctx.m;
  a::Var a0 = a::tri_solve(ctx.lz, delta, false);
  a::Var beta = a::tri_solve(ctx.lz, a0, true);
  a::Var mean = a::matmul(kfz, beta);
  a::Var base = mean_.apply(tape, fprev);
  if (base.valid()) mean = a::add(base, mean);

  a::Var prior_res = a::sub(kff, a::transpose(qf));  // B x 1
  std::vector<a::Var> cols;
  cols.reserve(ctx.l.size());
  for (const a::Var& lj : ctx.l) {
    a::Var ej = a::matmul(a::transpose(lj), ct);  // M x B
    a::Var sj = a::colwise_sumsq(ej);             // 1 x B
    cols.push_back(a::add(prior_res, a::transpose(sj)));
  }
  a::Var var = a::hstack(cols);
  if (clamp) var = a::clamp_min(var, kVarianceFloor);
  return {mean, var};
}

ad::Var SvgpLayer::kl(ad::Tape& tape, const TapeCtx& ctx) const {
  namespace a = ad;
  a::Var delta = ctx.mean_z.valid() ? a::sub(ctx.m, ctx.mean_z) : ctx.m;
  a::Var a0 = a::tri_solve(ctx.lz, delta, false);
  a::Var acc = a::scale(a::sum(a::mul(a0, a0)), 0.5);  // quadratic term
  for (const a::Var& lj : ctx.l) {
    a::Var e = a::tri_solve(ctx.lz, lj, false);
    acc = a::add(acc, a::scale(a::sum(a::mul(e, e)), 0.5));  // trace term
    acc = a::sub(acc, a::sum_log_diag(lj));
  }
  const double d = static_cast<double>(width_);
  const double m = static_cast<double>(num_inducing());
  acc = a::add(acc, a::scale(a::sum_log_diag(ctx.lz), d));
  acc = a::add(acc, tape.constant_scalar(-0.5 * d * m));
  return acc;
}

SvgpLayer::ValueCtx SvgpLayer::prepare() const {
  ValueCtx ctx;
  Mat kzz = kzz_value(z_.value, kernel_values());
  CholeskyResult res = cholesky_with_policy(kzz);
  ctx.lz = std::move(res.factor);
  ctx.jitter = res.jitter;
  kzz.diagonal().array() += res.jitter;
  ctx.kzz_eff = std::move(kzz);
  if (!spec_.is_conv() && mean_.kind != MeanFunction::Kind::Zero)
    ctx.mean_z = mean_.apply(z_.value);
  Mat delta = m_.value;
  if (ctx.mean_z.size() > 0) delta -= ctx.mean_z;
  ctx.beta = tri_solve(ctx.lz, tri_solve(ctx.lz, delta, false), true);
  return ctx;
}

void SvgpLayer::conditional(const ValueCtx& ctx, const Mat& fprev, Mat* mean,
                            Mat* var, bool clamp) const {
  const Mat kfz = kfz_value(fprev, z_.value, kernel_values(), spec_);
  const Mat kff = kff_diag_value(fprev, kernel_values(), spec_);
  *mean = kfz * ctx.beta;
  if (mean_.kind != MeanFunction::Kind::Zero) *mean += mean_.apply(fprev);

  const Mat at = tri_solve(ctx.lz, kfz.transpose(), false);  // M x B
  const Mat ct = tri_solve(ctx.lz, at, true);                // M x B
  const Vec qf = at.array().square().colwise().sum();
  var->resize(fprev.rows(), width_);
  for (Index j = 0; j < width_; ++j) {
    const Mat ej = factor_value(j).transpose() * ct;
    const Vec sj = ej.array().square().colwise().sum();
    var->col(j) = kff.col(0) - qf + sj;
  }
  if (clamp) *var = var->cwiseMax(kVarianceFloor);
}

double gaussian_kl(const Mat& lk, const Mat& m, const Mat& mu0, const Mat& ls) {
  const Index n = lk.rows();
  Mat delta = m - mu0;
  const Mat a = tri_solve(lk, delta, false);
  const Mat e = tri_solve(lk, ls, false);
  double kl = 0.5 * (a.array().square().sum() + e.array().square().sum() -
                     static_cast<double>(n));
  kl += lk.diagonal().array().log().sum() - ls.diagonal().array().log().sum();
  return kl;
}

double SvgpLayer::kl() const {
  const ValueCtx ctx = prepare();
  Mat mu0 = ctx.mean_z.size() > 0 ? ctx.mean_z
                                  : Mat(Mat::Zero(num_inducing(), width_));
  double total = 0.0;
  for (Index j = 0; j < width_; ++j)
    total += gaussian_kl(ctx.lz, m_.value.col(j), mu0.col(j), factor_value(j));
  return total;
}

}  // namespace cdgp
