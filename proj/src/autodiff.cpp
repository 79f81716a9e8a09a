#include "mulsmo/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace mulsmo::ad {

namespace {

using Index = Eigen::Index;

[[noreturn]] void shape_error(const char* op, const Mat& a, const Mat& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()));
}

Var make(Mat value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  Var out(std::move(value));
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward_fn = std::move(fn);
  return out;
}

inline Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

void Node::accumulate(const Mat& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Mat Var::grad() const {
  if (node_->grad.size() == 0) return Mat::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

Var constant(Mat value) { return Var(std::move(value), false); }
Var leaf(Mat value) { return Var(std::move(value), true); }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("backward: root must be 1x1");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
  // Intermediate gradients are not needed after the pass; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a.value(), b.value());
  return make(a.value() + b.value(), {a, b}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    parent(n, 1).accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.value(), b.value());
  return make(a.value() - b.value(), {a, b}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    parent(n, 1).accumulate(-n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a.value(), b.value());
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a}, [s](Node& n) { parent(n, 0).accumulate(n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make(a.value().array() + s, {a}, [](Node& n) { parent(n, 0).accumulate(n.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a.value(), row.value());
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {a, row}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("mul_row", a.value(), row.value());
  Mat out = a.value().array().rowwise() * row.value().row(0).array();
  return make(std::move(out), {a, row}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pr = parent(n, 1);
    if (pa.requires_grad) {
      Mat g = n.grad.array().rowwise() * pr.value.row(0).array();
      pa.accumulate(g);
    }
    if (pr.requires_grad) pr.accumulate(n.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

Var add_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("add_col", a.value(), col.value());
  Mat out = a.value();
  out.colwise() += col.value().col(0);
  return make(std::move(out), {a, col}, [](Node& n) {
    parent(n, 0).accumulate(n.grad);
    if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad.rowwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) shape_error("mul_col", a.value(), col.value());
  Mat out = a.value().array().colwise() * col.value().col(0).array();
  return make(std::move(out), {a, col}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pc = parent(n, 1);
    if (pa.requires_grad) {
      Mat g = n.grad.array().colwise() * pc.value.col(0).array();
      pa.accumulate(g);
    }
    if (pc.requires_grad) pc.accumulate(n.grad.cwiseProduct(pa.value).rowwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  Mat out = a.value() * b.value();
  return make(std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
  });
}

Var transpose(const Var& a) {
  return make(a.value().transpose(), {a},
              [](Node& n) { parent(n, 0).accumulate(n.grad.transpose()); });
}

Var silu(const Var& a) {
  Mat sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Mat out = a.value().cwiseProduct(sig);
  return make(std::move(out), {a}, [sig](Node& n) {
    const Mat& x = parent(n, 0).value;
    Mat d = (sig.array() * (1.0 + x.array() * (1.0 - sig.array()))).matrix();
    parent(n, 0).accumulate(n.grad.cwiseProduct(d));
  });
}

Var tanh(const Var& a) {
  Mat out = a.value().array().tanh().matrix();
  return make(out, {a}, [out](Node& n) {
    parent(n, 0).accumulate(n.grad.cwiseProduct((1.0 - out.array().square()).matrix()));
  });
}

Var exp(const Var& a) {
  Mat out = a.value().array().exp().matrix();
  return make(out, {a}, [out](Node& n) { parent(n, 0).accumulate(n.grad.cwiseProduct(out)); });
}

Var log(const Var& a) {
  return make(a.value().array().log().matrix(), {a}, [](Node& n) {
    parent(n, 0).accumulate(n.grad.cwiseQuotient(parent(n, 0).value));
  });
}

Var abs(const Var& a) {
  return make(a.value().cwiseAbs(), {a}, [](Node& n) {
    Mat s = parent(n, 0).value.unaryExpr([](double x) { return (x > 0) - (x < 0) + 0.0; });
    parent(n, 0).accumulate(n.grad.cwiseProduct(s));
  });
}

Var square(const Var& a) {
  return make(a.value().array().square().matrix(), {a}, [](Node& n) {
    parent(n, 0).accumulate(2.0 * n.grad.cwiseProduct(parent(n, 0).value));
  });
}

Var sqrt(const Var& a) {
  Mat out = a.value().array().sqrt().matrix();
  return make(out, {a}, [out](Node& n) {
    parent(n, 0).accumulate((0.5 * n.grad.array() / out.array()).matrix());
  });
}

Var softplus(const Var& a) {
  Mat out = a.value().unaryExpr(
      [](double x) { return x > 30 ? x : (x < -30 ? std::exp(x) : std::log1p(std::exp(x))); });
  return make(std::move(out), {a}, [](Node& n) {
    Mat sig = (1.0 + (-parent(n, 0).value.array()).exp()).inverse().matrix();
    parent(n, 0).accumulate(n.grad.cwiseProduct(sig));
  });
}

Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return make(std::move(out), {a}, [](Node& n) {
    const Mat& x = parent(n, 0).value;
    parent(n, 0).accumulate(Mat::Constant(x.rows(), x.cols(), n.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / count);
}

Var row_sum(const Var& a) {
  return make(a.value().rowwise().sum(), {a}, [](Node& n) {
    const Mat& x = parent(n, 0).value;
    Mat g = n.grad.replicate(1, x.cols());
    parent(n, 0).accumulate(g);
  });
}

Var col_mean(const Var& a) {
  const double r = static_cast<double>(a.rows());
  return make(a.value().colwise().mean(), {a}, [r](Node& n) {
    const Mat& x = parent(n, 0).value;
    Mat g = (n.grad / r).replicate(x.rows(), 1);
    parent(n, 0).accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  if (gain.cols() != cols || bias.cols() != cols) shape_error("layer_norm", x.value(), gain.value());
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Mat out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return make(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& n) {
    Node& px = parent(n, 0);
    Node& pg = parent(n, 1);
    Node& pb = parent(n, 2);
    if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
    if (px.requires_grad) {
      const double c = static_cast<double>(xhat.cols());
      Mat dxhat = n.grad.array().rowwise() * pg.value.row(0).array();
      Mat dx(xhat.rows(), xhat.cols());
      for (Index r = 0; r < xhat.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).sum() / c;
        dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
      px.accumulate(dx);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  Mat out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    const double lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  return make(out, {a}, [out](Node& n) {
    Mat p = out.array().exp().matrix();
    Mat g = n.grad - (p.array().colwise() * n.grad.rowwise().sum().array()).matrix();
    parent(n, 0).accumulate(g);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  Eigen::VectorXd inv = (norms.array().max(eps)).inverse().matrix();
  Mat out = a.value().array().colwise() * inv.array();
  return make(out, {a}, [out, inv](Node& n) {
    Mat g(out.rows(), out.cols());
    for (Index r = 0; r < out.rows(); ++r) {
      const double d = n.grad.row(r).dot(out.row(r));
      g.row(r) = inv(r) * (n.grad.row(r) - d * out.row(r));
    }
    parent(n, 0).accumulate(g);
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range outside matrix");
  }
  return make(a.value().middleRows(start, count), {a}, [start, count](Node& n) {
    Node& p = parent(n, 0);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, count) = n.grad;
    p.accumulate(g);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range outside matrix");
  }
  return make(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
    Node& p = parent(n, 0);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = n.grad;
    p.accumulate(g);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return make(std::move(out), parts, [offsets](Node& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      Node& p = parent(n, i);
      if (p.requires_grad) p.accumulate(n.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Index cols = 0;
  const Index rows = parts.front().rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return make(std::move(out), parts, [offsets](Node& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      Node& p = parent(n, i);
      if (p.requires_grad) p.accumulate(n.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

Var gather_rows(const Var& a, const std::vector<Index>& rows) {
  Mat out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: index");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return make(std::move(out), {a}, [rows](Node& n) {
    Node& p = parent(n, 0);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += n.grad.row(static_cast<Index>(i));
    p.accumulate(g);
  });
}

namespace {

Mat reshape_row_major(const Mat& m, Index rows, Index cols) {
  Mat out(rows, cols);
  Index k = 0;
  const Index src_cols = m.cols();
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c, ++k) out(r, c) = m(k / src_cols, k % src_cols);
  }
  return out;
}

}  // namespace

Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  return make(reshape_row_major(a.value(), rows, cols), {a}, [](Node& n) {
    Node& p = parent(n, 0);
    p.accumulate(reshape_row_major(n.grad, p.value.rows(), p.value.cols()));
  });
}

Var concat_tokens(const Var& a, Index ta, const Var& b, Index tb) {
  if (a.cols() != b.cols() || a.rows() % ta != 0 || b.rows() % tb != 0 ||
      a.rows() / ta != b.rows() / tb) {
    shape_error("concat_tokens", a.value(), b.value());
  }
  const Index batch = a.rows() / ta;
  const Index t = ta + tb;
  Mat out(batch * t, a.cols());
  for (Index s = 0; s < batch; ++s) {
    out.middleRows(s * t, ta) = a.value().middleRows(s * ta, ta);
    out.middleRows(s * t + ta, tb) = b.value().middleRows(s * tb, tb);
  }
  return make(std::move(out), {a, b}, [batch, ta, tb, t](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      Mat g(batch * ta, n.grad.cols());
      for (Index s = 0; s < batch; ++s) g.middleRows(s * ta, ta) = n.grad.middleRows(s * t, ta);
      pa.accumulate(g);
    }
    if (pb.requires_grad) {
      Mat g(batch * tb, n.grad.cols());
      for (Index s = 0; s < batch; ++s) g.middleRows(s * tb, tb) = n.grad.middleRows(s * t + ta, tb);
      pb.accumulate(g);
    }
  });
}

Var slice_tokens(const Var& a, Index t, Index start, Index count) {
  if (a.rows() % t != 0 || start < 0 || start + count > t) {
    throw std::invalid_argument("slice_tokens: bad token range");
  }
  const Index batch = a.rows() / t;
  Mat out(batch * count, a.cols());
  for (Index s = 0; s < batch; ++s) out.middleRows(s * count, count) = a.value().middleRows(s * t + start, count);
  return make(std::move(out), {a}, [batch, t, start, count](Node& n) {
    Node& p = parent(n, 0);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    for (Index s = 0; s < batch; ++s) g.middleRows(s * t + start, count) = n.grad.middleRows(s * count, count);
    p.accumulate(g);
  });
}

Var repeat_tokens(const Var& per_sample, Index t) {
  const Index batch = per_sample.rows();
  Mat out(batch * t, per_sample.cols());
  for (Index s = 0; s < batch; ++s) out.middleRows(s * t, t) = per_sample.value().row(s).replicate(t, 1);
  return make(std::move(out), {per_sample}, [batch, t](Node& n) {
    Mat g(batch, n.grad.cols());
    for (Index s = 0; s < batch; ++s) g.row(s) = n.grad.middleRows(s * t, t).colwise().sum();
    parent(n, 0).accumulate(g);
  });
}

Var mean_tokens(const Var& a, Index t) {
  if (a.rows() % t != 0) throw std::invalid_argument("mean_tokens: rows not divisible by tokens");
  const Index batch = a.rows() / t;
  Mat out(batch, a.cols());
  for (Index s = 0; s < batch; ++s) out.row(s) = a.value().middleRows(s * t, t).colwise().mean();
  return make(std::move(out), {a}, [batch, t](Node& n) {
    Mat g(batch * t, n.grad.cols());
    for (Index s = 0; s < batch; ++s) g.middleRows(s * t, t) = (n.grad.row(s) / double(t)).replicate(t, 1);
    parent(n, 0).accumulate(g);
  });
}

Var add_tokenwise(const Var& a, const Var& per_token, Index t) {
  if (per_token.rows() != t || per_token.cols() != a.cols() || a.rows() % t != 0) {
    shape_error("add_tokenwise", a.value(), per_token.value());
  }
  const Index batch = a.rows() / t;
  Mat out = a.value();
  for (Index s = 0; s < batch; ++s) out.middleRows(s * t, t) += per_token.value();
  return make(std::move(out), {a, per_token}, [batch, t](Node& n) {
    parent(n, 0).accumulate(n.grad);
    if (parent(n, 1).requires_grad) {
      Mat g = Mat::Zero(t, n.grad.cols());
      for (Index s = 0; s < batch; ++s) g += n.grad.middleRows(s * t, t);
      parent(n, 1).accumulate(g);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, Index tokens, int heads) {
  if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() || q.cols() != v.cols() ||
      q.rows() % tokens != 0 || q.cols() % heads != 0) {
    shape_error("attention", q.value(), k.value());
  }
  const Index batch = q.rows() / tokens;
  const Index dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[(s*heads + h)] : tokens x tokens
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(batch * heads));
  Mat out(q.rows(), q.cols());
  for (Index s = 0; s < batch; ++s) {
    for (int h = 0; h < heads; ++h) {
      auto qb = q.value().block(s * tokens, h * dh, tokens, dh);
      auto kb = k.value().block(s * tokens, h * dh, tokens, dh);
      auto vb = v.value().block(s * tokens, h * dh, tokens, dh);
      Mat scores = (qb * kb.transpose()) * inv_sqrt;
      for (Index r = 0; r < tokens; ++r) {
        const double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(s * tokens, h * dh, tokens, dh) = scores * vb;
      (*probs)[static_cast<std::size_t>(s * heads + h)] = std::move(scores);
    }
  }
  return make(std::move(out), {q, k, v}, [probs, batch, heads, dh, tokens, inv_sqrt](Node& n) {
    Node& pq = parent(n, 0);
    Node& pk = parent(n, 1);
    Node& pv = parent(n, 2);
    Mat gq = Mat::Zero(pq.value.rows(), pq.value.cols());
    Mat gk = Mat::Zero(pk.value.rows(), pk.value.cols());
    Mat gv = Mat::Zero(pv.value.rows(), pv.value.cols());
    for (Index s = 0; s < batch; ++s) {
      for (int h = 0; h < heads; ++h) {
        const Mat& p = (*probs)[static_cast<std::size_t>(s * heads + h)];
        auto go = n.grad.block(s * tokens, h * dh, tokens, dh);
        auto qb = pq.value.block(s * tokens, h * dh, tokens, dh);
        auto kb = pk.value.block(s * tokens, h * dh, tokens, dh);
        auto vb = pv.value.block(s * tokens, h * dh, tokens, dh);
        gv.block(s * tokens, h * dh, tokens, dh) = p.transpose() * go;
        Mat dp = go * vb.transpose();
        Eigen::VectorXd rs = (dp.cwiseProduct(p)).rowwise().sum();
        Mat ds = (p.array() * (dp.array().colwise() - rs.array())).matrix() * inv_sqrt;
        gq.block(s * tokens, h * dh, tokens, dh) = ds * kb;
        gk.block(s * tokens, h * dh, tokens, dh) = ds.transpose() * qb;
      }
    }
    pq.accumulate(gq);
    pk.accumulate(gk);
    pv.accumulate(gv);
  });
}

Var temporal_unfold(const Var& a, Index frames, int kernel) {
  if (a.rows() % frames != 0 || kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("temporal_unfold: bad frames/kernel");
  }
  const Index batch = a.rows() / frames;
  const Index c = a.cols();
  const int half = kernel / 2;
  Mat out = Mat::Zero(a.rows(), c * kernel);
  for (Index s = 0; s < batch; ++s) {
    for (Index f = 0; f < frames; ++f) {
      for (int j = 0; j < kernel; ++j) {
        const Index src = f + j - half;
        if (src < 0 || src >= frames) continue;
        out.block(s * frames + f, j * c, 1, c) = a.value().row(s * frames + src);
      }
    }
  }
  return make(std::move(out), {a}, [batch, frames, kernel, half, c](Node& n) {
    Node& p = parent(n, 0);
    Mat g = Mat::Zero(p.value.rows(), c);
    for (Index s = 0; s < batch; ++s) {
      for (Index f = 0; f < frames; ++f) {
        for (int j = 0; j < kernel; ++j) {
          const Index src = f + j - half;
          if (src < 0 || src >= frames) continue;
          g.row(s * frames + src) += n.grad.block(s * frames + f, j * c, 1, c);
        }
      }
    }
    p.accumulate(g);
  });
}

}  // namespace mulsmo::ad
