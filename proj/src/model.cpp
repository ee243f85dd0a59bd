#include "cdgp/model.hpp"

#include <cmath>

namespace cdgp {

Vec log_softmax_likelihood(const Mat& f, const std::vector<int>& y) {
  if (static_cast<Index>(y.size()) != f.rows())
    throw SizeMismatch("log_softmax_likelihood: label count differs from rows");
  Vec out(f.rows());
  for (Index n = 0; n < f.rows(); ++n) {
    if (y[n] < 0 || y[n] >= f.cols())
      throw LabelOutOfRange("label " + std::to_string(y[n]));
    const double mx = f.row(n).maxCoeff();
    double z = 0.0;
    for (Index j = 0; j < f.cols(); ++j) z += std::exp(f(n, j) - mx);
    out(n) = f(n, y[n]) - mx - std::log(z);
  }
  return out;
}

Mat softmax_rows(const Mat& f) {
  Mat p(f.rows(), f.cols());
  for (Index n = 0; n < f.rows(); ++n) {
    const double mx = f.row(n).maxCoeff();
    double z = 0.0;
    for (Index j = 0; j < f.cols(); ++j) {
      p(n, j) = std::exp(f(n, j) - mx);
      z += p(n, j);
    }
    p.row(n) /= z;
  }
  return p;
}

std::pair<double, double> metrics(const Prediction& pred, const std::vector<int>& y) {
  const Index n = pred.probabilities.rows();
  if (static_cast<Index>(y.size()) != n ||
      static_cast<Index>(pred.labels.size()) != n)
    throw SizeMismatch("metrics: prediction and label sizes differ");
  Index correct = 0;
  double nlpp = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (y[i] < 0 || y[i] >= pred.probabilities.cols())
      throw LabelOutOfRange("label " + std::to_string(y[i]));
    if (pred.labels[i] == y[i]) ++correct;
    nlpp -= std::log(std::max(pred.probabilities(i, y[i]), 1e-300));
  }
  return {static_cast<double>(correct) / static_cast<double>(n),
          nlpp / static_cast<double>(n)};
}

DgpModel::DgpModel(std::vector<SvgpLayer> layers, Index num_train, int s_train,
                   int s_pred)
    : layers_(std::move(layers)),
      num_train_(num_train),
      s_train_(s_train),
      s_pred_(s_pred) {
  if (layers_.empty()) throw ConfigError("model needs at least one layer");
  if (s_train_ < 1 || s_pred_ < 1)
    throw ConfigError("sample counts must be positive");
}

void DgpModel::validate() const {
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    if (layers_[l].input_dim() != layers_[l - 1].width())
      throw ConfigError("layer " + std::to_string(l) + " input dim " +
                        std::to_string(layers_[l].input_dim()) +
                        " does not match previous width " +
                        std::to_string(layers_[l - 1].width()));
  }
  for (const SvgpLayer& layer : layers_) {
    if (layer.spec().is_conv() &&
        layer.spec().geom.flat_dim() != layer.input_dim())
      throw ConfigError("layer " + std::to_string(layer.index()) +
                        " patch geometry does not cover its input");
  }
}

std::vector<std::vector<Mat>> DgpModel::draw_eps(Rng stream, int samples,
                                                 Index batch) const {
  std::vector<std::vector<Mat>> eps(samples);
  for (int s = 0; s < samples; ++s)
    for (const SvgpLayer& layer : layers_)
      eps[s].push_back(gaussian_matrix(stream, batch, layer.width()));
  return eps;
}

DgpModel::ElboResult DgpModel::elbo_with_eps(
    ad::Tape& tape, const Mat& x, const std::vector<int>& y,
    const std::vector<std::vector<Mat>>& eps) {
  namespace a = ad;
  if (x.rows() == 0) throw InvalidSize("elbo: empty batch");
  if (num_train_ <= 0) throw ConfigError("elbo: num_train not set");
  const int samples = static_cast<int>(eps.size());
  if (samples < 1) throw InvalidSize("elbo: need at least one sample");

  ElboResult result;
  std::vector<SvgpLayer::TapeCtx> ctxs;
  ctxs.reserve(layers_.size());
  for (SvgpLayer& layer : layers_) {
    ctxs.push_back(layer.build(tape));
    for (auto& b : ctxs.back().bindings) result.bindings.push_back(b);
  }

  a::Var x0 = tape.constant(x);
  a::Var ll_acc;
  for (int s = 0; s < samples; ++s) {
    a::Var f = x0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto [mean, var] = layers_[l].conditional(tape, ctxs[l], f, true);
      a::Var noise =
          a::mul(tape.constant(eps[s][l]), a::sqrt(var));
      f = a::add(mean, noise);
    }
    a::Var ll = a::log_softmax_pick(f, y);
    ll_acc = (s == 0) ? ll : a::add(ll_acc, ll);
  }
  a::Var mean_ll = a::scale(a::sum(ll_acc), 1.0 / samples);
  const double data_scale =
      static_cast<double>(num_train_) / static_cast<double>(x.rows());
  a::Var obj = a::scale(mean_ll, data_scale);
  for (std::size_t l = 0; l < layers_.size(); ++l)
    obj = a::sub(obj, layers_[l].kl(tape, ctxs[l]));
  result.value = obj;
  return result;
}

DgpModel::ElboResult DgpModel::elbo(ad::Tape& tape, const Mat& x,
                                    const std::vector<int>& y, Rng eps_stream) {
  return elbo_with_eps(tape, x, y, draw_eps(eps_stream, s_train_, x.rows()));
}

std::vector<Mat> DgpModel::propagate(const Mat& x, Rng rng, int samples) const {
  std::vector<SvgpLayer::ValueCtx> ctxs;
  ctxs.reserve(layers_.size());
  for (const SvgpLayer& layer : layers_) ctxs.push_back(layer.prepare());
  std::vector<Mat> out;
  out.reserve(samples);
  for (int s = 0; s < samples; ++s) {
    Mat f = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat mean, var;
      layers_[l].conditional(ctxs[l], f, &mean, &var, true);
      f = sample_gaussian(mean, var, rng);
    }
    out.push_back(std::move(f));
  }
  return out;
}

Prediction DgpModel::predict(const Mat& x, Rng rng) const {
  const std::vector<Mat> samples = propagate(x, rng, s_pred_);
  Mat probs = Mat::Zero(x.rows(), num_classes());
  for (const Mat& f : samples) probs += softmax_rows(f);
  probs /= static_cast<double>(samples.size());

  Prediction pred;
  pred.probabilities = std::move(probs);
  pred.labels.resize(x.rows());
  for (Index n = 0; n < x.rows(); ++n) {
    int best = 0;
    for (Index j = 1; j < pred.probabilities.cols(); ++j)
      if (pred.probabilities(n, j) > pred.probabilities(n, best))
        best = static_cast<int>(j);
    pred.labels[n] = best;
  }
  return pred;
}

std::vector<Parameter*> DgpModel::parameters() {
  std::vector<Parameter*> out;
  for (SvgpLayer& layer : layers_)
    for (Parameter* p : layer.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> DgpModel::trainable_parameters() {
  std::vector<Parameter*> out;
  for (SvgpLayer& layer : layers_)
    for (Parameter* p : layer.trainable_parameters()) out.push_back(p);
  return out;
}

}  // namespace cdgp
