#pragma once

#include "cdgp/common.hpp"

#include <functional>
#include <vector>

namespace cdgp::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

// Append-only reverse-mode tape over dense matrices. Nodes are created in
// topological order by construction; backward() walks them in reverse.
class Tape {
 public:
  Var leaf(Mat value);      // differentiable input
  Var constant(Mat value);  // non-differentiable input
  Var constant_scalar(double value);

  // Generic appender used by fused ops: `backprop` receives the tape and the
  // node's output gradient and is responsible for accumulating into parents.
  Var node(Mat value, const std::vector<Var>& parents,
           std::function<void(Tape&, const Mat&)> backprop);

  void backward(Var loss);

  const Mat& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v; zeros if v was unused.
  Mat gradient(Var v) const;
  bool requires_grad(Var v) const;
  void accumulate(Var v, const Mat& delta);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct NodeRec {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Mat&)> backprop;
  };

  void check_owns(Var v) const;

  std::vector<NodeRec> nodes_;
};

// ---- primitive operations ------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var softplus(Var a);
Var clamp_min(Var a, double lo);
Var sum(Var a);             // 1x1
Var colwise_sumsq(Var a);   // 1xm, sum of squares down each column
Var hstack(const std::vector<Var>& parts);
Var sum_log_diag(Var lower);  // 1x1

// Lower-triangular factor with softplus-positive diagonal from a raw square
// matrix; the strict upper triangle of `raw` is ignored.
Var tril_factor(Var raw);

// Cholesky of a (symmetric) node under the escalating jitter policy.
// `jitter_out`, when given, receives the jitter that was actually applied.
Var cholesky(Var a, double* jitter_out = nullptr);

Var tri_solve(Var lower, Var rhs, bool transposed);

// Row n of the result is F[n, labels[n]] - logsumexp(F[n, :]).
Var log_softmax_pick(Var f, const std::vector<int>& labels);

// Numerically stable softplus/sigmoid shared with the value path.
double softplus_value(double x);
double sigmoid_value(double x);

}  // namespace cdgp::ad
