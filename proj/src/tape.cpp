#include "cdgp/tape.hpp"

#include "cdgp/linalg.hpp"

#include <cmath>
#include <utility>

namespace cdgp::ad {

const Mat& Var::value() const {
  require(valid(), "Var::value on empty handle");
  return tape->value(*this);
}

void Tape::check_owns(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw GraphCycle("node does not belong to this tape");
}

Var Tape::leaf(Mat value) {
  nodes_.push_back(NodeRec{std::move(value), Mat(), true, nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Mat value) {
  nodes_.push_back(NodeRec{std::move(value), Mat(), false, nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant_scalar(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::node(Mat value, const std::vector<Var>& parents,
               std::function<void(Tape&, const Mat&)> backprop) {
  bool needs = false;
  for (const Var& p : parents) {
    check_owns(p);
    // Parents precede children; the operation records form a DAG by
    // construction and this guards the invariant.
    if (p.id >= static_cast<int>(nodes_.size()))
      throw GraphCycle("parent created after child");
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(
      NodeRec{std::move(value), Mat(), needs, needs ? std::move(backprop) : nullptr});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Mat& Tape::value(Var v) const {
  check_owns(v);
  return nodes_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
  check_owns(v);
  return nodes_[v.id].requires_grad;
}

void Tape::accumulate(Var v, const Mat& delta) {
  check_owns(v);
  NodeRec& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (delta.rows() != n.value.rows() || delta.cols() != n.value.cols())
    throw DimensionMismatch("gradient shape does not match value shape");
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += delta;
}

Mat Tape::gradient(Var v) const {
  check_owns(v);
  const NodeRec& n = nodes_[v.id];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  check_owns(loss);
  if (nodes_[loss.id].value.rows() != 1 || nodes_[loss.id].value.cols() != 1)
    throw DimensionMismatch("backward target must be scalar (1x1)");
  for (NodeRec& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id].grad = Mat::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    NodeRec& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, n.grad);
  }
}

namespace {

Tape& tape_of(Var a) {
  require(a.valid(), "op on empty Var");
  return *a.tape;
}

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape& t = tape_of(a);
  return t.node(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  return t.node(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g);
    t.accumulate(b, Mat(-g));
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tape& t = tape_of(a);
  return t.node(a.value().cwiseProduct(b.value()), {a, b},
                [a, b](Tape& t, const Mat& g) {
                  t.accumulate(a, g.cwiseProduct(t.value(b)));
                  t.accumulate(b, g.cwiseProduct(t.value(a)));
                });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  return t.node(c * a.value(), {a},
                [a, c](Tape& t, const Mat& g) { t.accumulate(a, Mat(c * g)); });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  Tape& t = tape_of(a);
  return t.node(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a, g * t.value(b).transpose());
    t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  return t.node(a.value().transpose(), {a},
                [a](Tape& t, const Mat& g) { t.accumulate(a, g.transpose()); });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Mat out = a.value().array().exp();
  return t.node(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, g.cwiseProduct(Mat(t.value(a).array().exp())));
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Mat out = a.value().array().log();
  return t.node(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, Mat(g.array() / t.value(a).array()));
  });
}

Var sqrt(Var a) {
  Tape& t = tape_of(a);
  Mat out = a.value().array().sqrt();
  return t.node(out, {a}, [a, out](Tape& t, const Mat& g) {
    t.accumulate(a, Mat(0.5 * g.array() / out.array()));
  });
}

double softplus_value(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var softplus(Var a) {
  Tape& t = tape_of(a);
  Mat out = a.value().unaryExpr([](double x) { return softplus_value(x); });
  return t.node(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Mat s = t.value(a).unaryExpr([](double x) { return sigmoid_value(x); });
    t.accumulate(a, g.cwiseProduct(s));
  });
}

Var clamp_min(Var a, double lo) {
  Tape& t = tape_of(a);
  return t.node(a.value().cwiseMax(lo), {a}, [a, lo](Tape& t, const Mat& g) {
    const Mat mask =
        (t.value(a).array() > lo).cast<double>().matrix();
    t.accumulate(a, g.cwiseProduct(mask));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return t.node(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a, Mat(Mat::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0))));
  });
}

Var colwise_sumsq(Var a) {
  Tape& t = tape_of(a);
  Mat out = a.value().array().square().colwise().sum();
  return t.node(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Mat& av = t.value(a);
    Mat da = 2.0 * av;
    for (Index j = 0; j < av.cols(); ++j) da.col(j) *= g(0, j);
    t.accumulate(a, da);
  });
}

Var hstack(const std::vector<Var>& parts) {
  require(!parts.empty(), "hstack of nothing");
  Tape& t = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionMismatch("hstack: row counts differ");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return t.node(std::move(out), parents, [parts](Tape& t, const Mat& g) {
    Index at = 0;
    for (const Var& p : parts) {
      const Index w = t.value(p).cols();
      t.accumulate(p, g.middleCols(at, w));
      at += w;
    }
  });
}

Var sum_log_diag(Var lower) {
  if (lower.rows() != lower.cols())
    throw DimensionMismatch("sum_log_diag: matrix is not square");
  Tape& t = tape_of(lower);
  Mat out(1, 1);
  out(0, 0) = lower.value().diagonal().array().log().sum();
  return t.node(std::move(out), {lower}, [lower](Tape& t, const Mat& g) {
    const Mat& lv = t.value(lower);
    Mat dl = Mat::Zero(lv.rows(), lv.cols());
    dl.diagonal() = g(0, 0) * lv.diagonal().array().inverse();
    t.accumulate(lower, dl);
  });
}

Var tril_factor(Var raw) {
  if (raw.rows() != raw.cols())
    throw DimensionMismatch("tril_factor: matrix is not square");
  Tape& t = tape_of(raw);
  const Mat& rv = raw.value();
  Mat out = rv.template triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < rv.rows(); ++i) out(i, i) = softplus_value(rv(i, i));
  return t.node(std::move(out), {raw}, [raw](Tape& t, const Mat& g) {
    const Mat& rv = t.value(raw);
    Mat dr = g.template triangularView<Eigen::StrictlyLower>();
    for (Index i = 0; i < rv.rows(); ++i)
      dr(i, i) = g(i, i) * sigmoid_value(rv(i, i));
    t.accumulate(raw, dr);
  });
}

Var cholesky(Var a, double* jitter_out) {
  Tape& t = tape_of(a);
  CholeskyResult res = cholesky_with_policy(a.value());
  if (jitter_out) *jitter_out = res.jitter;
  Mat l = res.factor;
  return t.node(l, {a}, [a, l](Tape& t, const Mat& g) {
    // Smith (1995) unblocked reverse; produces tril(dA), which is exactly the
    // sensitivity of the consumed lower triangle.
    const Index n = l.rows();
    Mat p = g.template triangularView<Eigen::Lower>();
    for (Index k = n - 1; k >= 0; --k) {
      const Index m = n - (k + 1);
      if (m > 0)
        p(k, k) -= (l.block(k + 1, k, m, 1).transpose() * p.block(k + 1, k, m, 1))(0, 0) /
                   l(k, k);
      p.block(k, k, n - k, 1) /= l(k, k);
      if (k > 0) {
        p.block(k, 0, 1, k) -=
            p.block(k, k, n - k, 1).transpose() * l.block(k, 0, n - k, k);
        if (m > 0)
          p.block(k + 1, 0, m, k) -= p.block(k + 1, k, m, 1) * l.block(k, 0, 1, k);
      }
      p(k, k) *= 0.5;
    }
    t.accumulate(a, p);
  });
}

Var tri_solve(Var lower, Var rhs, bool transposed) {
  Tape& t = tape_of(lower);
  Mat x = cdgp::tri_solve(lower.value(), rhs.value(), transposed);
  return t.node(x, {lower, rhs},
                [lower, rhs, x, transposed](Tape& t, const Mat& g) {
                  const Mat& lv = t.value(lower);
                  if (!transposed) {
                    const Mat w = cdgp::tri_solve(lv, g, true);
                    t.accumulate(rhs, w);
                    if (t.requires_grad(lower)) {
                      Mat dl = Mat(-(w * x.transpose()))
                                   .template triangularView<Eigen::Lower>();
                      t.accumulate(lower, dl);
                    }
                  } else {
                    const Mat w = cdgp::tri_solve(lv, g, false);
                    t.accumulate(rhs, w);
                    if (t.requires_grad(lower)) {
                      Mat dl = Mat(-(x * w.transpose()))
                                   .template triangularView<Eigen::Lower>();
                      t.accumulate(lower, dl);
                    }
                  }
                });
}

Var log_softmax_pick(Var f, const std::vector<int>& labels) {
  Tape& t = tape_of(f);
  const Mat& fv = f.value();
  if (static_cast<Index>(labels.size()) != fv.rows())
    throw SizeMismatch("log_softmax_pick: label count differs from batch size");
  const Index c = fv.cols();
  Mat probs(fv.rows(), c);
  Mat out(fv.rows(), 1);
  for (Index n = 0; n < fv.rows(); ++n) {
    if (labels[n] < 0 || labels[n] >= c)
      throw LabelOutOfRange("label " + std::to_string(labels[n]) + " outside [0, " +
                            std::to_string(c) + ")");
    const double mx = fv.row(n).maxCoeff();
    double z = 0.0;
    for (Index j = 0; j < c; ++j) z += std::exp(fv(n, j) - mx);
    const double lse = mx + std::log(z);
    out(n, 0) = fv(n, labels[n]) - lse;
    for (Index j = 0; j < c; ++j) probs(n, j) = std::exp(fv(n, j) - lse);
  }
  return t.node(std::move(out), {f}, [f, probs, labels](Tape& t, const Mat& g) {
    Mat df = probs;
    for (Index n = 0; n < df.rows(); ++n) {
      df.row(n) *= -g(n, 0);
      df(n, labels[n]) += g(n, 0);
    }
    t.accumulate(f, df);
  });
}

}  // namespace cdgp::ad
