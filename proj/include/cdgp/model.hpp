#pragma once

#include "cdgp/svgp_layer.hpp"

#include <utility>
#include <vector>

namespace cdgp {

struct Prediction {
  Mat probabilities;        // B x C, rows sum to one
  std::vector<int> labels;  // argmax, lowest index wins ties
};

// Stable log p(y_n | F_n) under the softmax link, one entry per row.
Vec log_softmax_likelihood(const Mat& f, const std::vector<int>& y);
Mat softmax_rows(const Mat& f);

// accuracy and negative log predictive probability
std::pair<double, double> metrics(const Prediction& pred, const std::vector<int>& y);

class DgpModel {
 public:
  DgpModel(std::vector<SvgpLayer> layers, Index num_train, int s_train = 1,
           int s_pred = 25);

  void validate() const;

  // ---- training path ----
  struct ElboResult {
    ad::Var value;
    std::vector<std::pair<Parameter*, ad::Var>> bindings;
  };

  // eps[s][l] holds the standard-normal draw for sample s at layer l.
  ElboResult elbo_with_eps(ad::Tape& tape, const Mat& x, const std::vector<int>& y,
                           const std::vector<std::vector<Mat>>& eps);
  ElboResult elbo(ad::Tape& tape, const Mat& x, const std::vector<int>& y,
                  Rng eps_stream);
  std::vector<std::vector<Mat>> draw_eps(Rng stream, int samples, Index batch) const;

  // ---- value path ----
  std::vector<Mat> propagate(const Mat& x, Rng rng, int samples) const;
  Prediction predict(const Mat& x, Rng rng) const;

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> trainable_parameters();

  std::vector<SvgpLayer>& layers() { return layers_; }
  const std::vector<SvgpLayer>& layers() const { return layers_; }
  Index num_classes() const { return layers_.back().width(); }
  Index num_train() const { return num_train_; }
  void set_num_train(Index n) { num_train_ = n; }
  int s_train() const { return s_train_; }
  int s_pred() const { return s_pred_; }

 private:
  std::vector<SvgpLayer> layers_;
  Index num_train_;
  int s_train_;
  int s_pred_;
};

}  // namespace cdgp
