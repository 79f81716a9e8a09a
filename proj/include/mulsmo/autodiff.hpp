#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// Sequences are batched by stacking samples along rows: a batch of B samples
// with T tokens each is a (B*T) x width matrix whose row b*T + t holds token t
// of sample b. Token-aware ops take T explicitly.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace mulsmo::ad {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

struct Node {
  Mat value;
  Mat grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Mat& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);

  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  // Zero-shaped matrix when no gradient reached this variable.
  Mat grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Mat value);
Var leaf(Mat value);  // requires_grad = true

// Runs the backward pass from a 1x1 root.
void backward(const Var& root);

// Elementwise / algebraic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcast a 1 x C row over a's rows
Var mul_row(const Var& a, const Var& row);
Var add_col(const Var& a, const Var& col);  // broadcast an R x 1 column over a's columns
Var mul_col(const Var& a, const Var& col);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var neg(const Var& a);

Var silu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var softplus(const Var& a);

// Reductions.
Var sum(const Var& a);   // 1x1
Var mean(const Var& a);  // 1x1
Var row_sum(const Var& a);  // R x 1
Var col_mean(const Var& a);  // 1 x C

// Row-wise normalisation and softmax family.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var log_softmax_rows(const Var& a);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

// Shape plumbing.
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows);
// Row-major reshape (the flattened row-major order is preserved).
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

// Token ops for row-stacked batches.
Var concat_tokens(const Var& a, Eigen::Index ta, const Var& b, Eigen::Index tb);
Var slice_tokens(const Var& a, Eigen::Index t, Eigen::Index start, Eigen::Index count);
Var repeat_tokens(const Var& per_sample, Eigen::Index t);  // B x C -> (B*t) x C
Var mean_tokens(const Var& a, Eigen::Index t);              // (B*t) x C -> B x C
Var add_tokenwise(const Var& a, const Var& per_token, Eigen::Index t);  // per_token: t x C

// Multi-head scaled dot-product attention within each sample.
Var attention(const Var& q, const Var& k, const Var& v, Eigen::Index tokens, int heads);

// Zero-padded temporal window unfold: (B*L) x C -> (B*L) x (k*C), window centred.
Var temporal_unfold(const Var& a, Eigen::Index frames, int kernel);

}  // namespace mulsmo::ad
