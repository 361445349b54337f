#include "redformer/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace redformer::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var Var::constant(Matrix value) { return leaf(std::move(value), false); }

Var Var::leaf(Matrix value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

void backward(const Var& root) {
  check(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Intermediate gradients start fresh; leaves keep accumulating.
  for (Node* n : order)
    if (n->backward) n->grad.resize(0, 0);
  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Release intermediate buffers.
  for (Node* n : order)
    if (n->backward) n->grad.resize(0, 0);
}

Var detach(const Var& v) { return Var::constant(v.value()); }

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make(a.value() * b.value(), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a.cols() == b.cols(), "matmul_nt: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make(a.value() * b.value().transpose(), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad * bn->value);
    if (bn->requires_grad) bn->accumulate(self.grad.transpose() * an->value);
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make(a.value() + b.value(), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make(a.value() - b.value(), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make(a.value().cwiseProduct(b.value()), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(self.grad.cwiseProduct(an->value));
  });
}

Var add_bias(const Var& a, const Var& bias) {
  check(bias.rows() == 1 && bias.cols() == a.cols(), "add_bias: shape mismatch");
  auto an = a.node(), bn = bias.node();
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return make(std::move(out), {an, bn}, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  auto an = a.node();
  return make(a.value() * s, {an}, [an, s](Node& self) { an->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  auto an = a.node();
  return make((a.value().array() + s).matrix(), {an}, [an](Node& self) { an->accumulate(self.grad); });
}

Var sigmoid(const Var& a) {
  auto an = a.node();
  Matrix y = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make(y, {an}, [an, y](Node& self) {
    an->accumulate(self.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var tanh(const Var& a) {
  auto an = a.node();
  Matrix y = a.value().array().tanh().matrix();
  return make(y, {an}, [an, y](Node& self) {
    an->accumulate(self.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var relu(const Var& a) {
  auto an = a.node();
  return make(a.value().cwiseMax(0.0), {an}, [an](Node& self) {
    an->accumulate((an->value.array() > 0.0).select(self.grad, 0.0).matrix());
  });
}

Var exp(const Var& a) {
  auto an = a.node();
  Matrix y = a.value().array().exp().matrix();
  return make(y, {an}, [an, y](Node& self) { an->accumulate(self.grad.cwiseProduct(y)); });
}

Var abs(const Var& a) {
  auto an = a.node();
  return make(a.value().cwiseAbs(), {an}, [an](Node& self) {
    an->accumulate(self.grad.cwiseProduct(an->value.unaryExpr([](double x) {
      return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    })));
  });
}

Var softplus(const Var& a) {
  auto an = a.node();
  Matrix y = a.value().unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return make(std::move(y), {an}, [an](Node& self) {
    an->accumulate(self.grad.cwiseProduct(an->value.unaryExpr([](double x) {
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    })));
  });
}

Var sum(const Var& a) {
  auto an = a.node();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make(out, {an}, [an](Node& self) {
    an->accumulate(Matrix::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0)));
  });
}

Var mean_rows(const Var& a) {
  check(a.rows() > 0, "mean_rows: empty input");
  auto an = a.node();
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  return make(out, {an}, [an, inv](Node& self) {
    Matrix g = self.grad.replicate(an->value.rows(), 1) * inv;
    an->accumulate(g);
  });
}

Var softmax_rows(const Var& a) {
  auto an = a.node();
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return make(y, {an}, [an, y](Node& self) {
    Matrix g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = self.grad.row(r).dot(y.row(r));
      g.row(r) = y.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
    }
    an->accumulate(g);
  });
}

Var log_softmax_rows(const Var& a) {
  auto an = a.node();
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    const double lse = m + std::log((y.row(r).array() - m).exp().sum());
    y.row(r).array() -= lse;
  }
  return make(y, {an}, [an, y](Node& self) {
    Matrix g(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double gs = self.grad.row(r).sum();
      g.row(r) = self.grad.row(r) - (y.row(r).array().exp() * gs).matrix();
    }
    an->accumulate(g);
  });
}

Var gather_rows(const Var& a, std::vector<int> idx) {
  auto an = a.node();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    check(idx[r] < a.rows(), "gather_rows: index out of range");
    if (idx[r] >= 0) out.row(r) = a.value().row(idx[r]);
  }
  return make(std::move(out), {an}, [an, idx = std::move(idx)](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      if (idx[r] >= 0) g.row(idx[r]) += self.grad.row(r);
    an->accumulate(g);
  });
}

Var scale_rows(const Var& a, std::vector<double> factor) {
  check(static_cast<Eigen::Index>(factor.size()) == a.rows(), "scale_rows: size mismatch");
  auto an = a.node();
  const Eigen::Map<const Eigen::VectorXd> f(factor.data(), static_cast<Eigen::Index>(factor.size()));
  Matrix out = f.asDiagonal() * a.value();
  return make(std::move(out), {an}, [an, factor = std::move(factor)](Node& self) {
    const Eigen::Map<const Eigen::VectorXd> f(factor.data(), static_cast<Eigen::Index>(factor.size()));
    an->accumulate(f.asDiagonal() * self.grad);
  });
}

Var sparse_matmul(std::shared_ptr<const SparseMatrix> s, const Var& a) {
  check(s->cols() == a.rows(), "sparse_matmul: shape mismatch");
  auto an = a.node();
  Matrix out = (*s) * a.value();
  return make(std::move(out), {an}, [an, s](Node& self) {
    an->accumulate(s->transpose() * self.grad);
  });
}

Var vconcat(std::span<const Var> parts) {
  check(!parts.empty(), "vconcat: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    check(p.cols() == cols, "vconcat: column mismatch");
    rows += p.rows();
    nodes.push_back(p.node());
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make(std::move(out), nodes, [nodes](Node& self) {
    Eigen::Index r = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) n->accumulate(self.grad.middleRows(r, n->value.rows()));
      r += n->value.rows();
    }
  });
}

Var hconcat(std::span<const Var> parts) {
  check(!parts.empty(), "hconcat: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    check(p.rows() == rows, "hconcat: row mismatch");
    cols += p.cols();
    nodes.push_back(p.node());
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make(std::move(out), nodes, [nodes](Node& self) {
    Eigen::Index c = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) n->accumulate(self.grad.middleCols(c, n->value.cols()));
      c += n->value.cols();
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  auto an = a.node();
  return make(a.value().middleCols(start, count), {an}, [an, start, count](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    g.middleCols(start, count) = self.grad;
    an->accumulate(g);
  });
}

Var pick_sum(const Var& a, std::vector<std::pair<int, int>> entries, std::vector<double> weights) {
  check(entries.size() == weights.size(), "pick_sum: size mismatch");
  auto an = a.node();
  Matrix out(1, 1);
  out(0, 0) = 0.0;
  for (std::size_t k = 0; k < entries.size(); ++k)
    out(0, 0) += weights[k] * a.value()(entries[k].first, entries[k].second);
  return make(out, {an}, [an, entries = std::move(entries), weights = std::move(weights)](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    for (std::size_t k = 0; k < entries.size(); ++k)
      g(entries[k].first, entries[k].second) += weights[k] * self.grad(0, 0);
    an->accumulate(g);
  });
}

Var patch_gather(const Var& a, std::shared_ptr<const Eigen::MatrixXi> table) {
  auto an = a.node();
  const Eigen::Index taps = table->cols();
  const Eigen::Index cin = a.cols();
  Matrix out = Matrix::Zero(table->rows(), taps * cin);
  for (Eigen::Index r = 0; r < table->rows(); ++r)
    for (Eigen::Index k = 0; k < taps; ++k) {
      const int src = (*table)(r, k);
      if (src >= 0) out.block(r, k * cin, 1, cin) = a.value().row(src);
    }
  return make(std::move(out), {an}, [an, table, taps, cin](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), cin);
    for (Eigen::Index r = 0; r < table->rows(); ++r)
      for (Eigen::Index k = 0; k < taps; ++k) {
        const int src = (*table)(r, k);
        if (src >= 0) g.row(src) += self.grad.block(r, k * cin, 1, cin);
      }
    an->accumulate(g);
  });
}

Var head_dot(const Var& a, const Var& b, int heads, double scale_factor) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "head_dot: shape mismatch");
  check(heads > 0 && a.cols() % heads == 0, "head_dot: channels not divisible by heads");
  auto an = a.node(), bn = b.node();
  const Eigen::Index dh = a.cols() / heads;
  Matrix out(a.rows(), heads);
  for (Eigen::Index s = 0; s < a.rows(); ++s)
    for (int h = 0; h < heads; ++h)
      out(s, h) = scale_factor * a.value().row(s).segment(h * dh, dh).dot(b.value().row(s).segment(h * dh, dh));
  return make(std::move(out), {an, bn}, [an, bn, heads, dh, scale_factor](Node& self) {
    const Eigen::Index n = an->value.rows();
    Matrix ga, gb;
    if (an->requires_grad) ga.resize(n, an->value.cols());
    if (bn->requires_grad) gb.resize(n, bn->value.cols());
    for (Eigen::Index s = 0; s < n; ++s)
      for (int h = 0; h < heads; ++h) {
        const double g = self.grad(s, h) * scale_factor;
        if (an->requires_grad) ga.row(s).segment(h * dh, dh) = g * bn->value.row(s).segment(h * dh, dh);
        if (bn->requires_grad) gb.row(s).segment(h * dh, dh) = g * an->value.row(s).segment(h * dh, dh);
      }
    if (an->requires_grad) an->accumulate(ga);
    if (bn->requires_grad) bn->accumulate(gb);
  });
}

Var segment_softmax(const Var& logits, std::shared_ptr<const std::vector<int>> offsets) {
  check(!offsets->empty() && offsets->back() == logits.rows(), "segment_softmax: bad offsets");
  auto ln = logits.node();
  Matrix y = logits.value();
  const std::size_t groups = offsets->size() - 1;
  for (std::size_t g = 0; g < groups; ++g) {
    const int lo = (*offsets)[g], n = (*offsets)[g + 1] - lo;
    if (n == 0) continue;
    auto block = y.middleRows(lo, n);
    const Eigen::RowVectorXd m = block.colwise().maxCoeff();
    block = (block.rowwise() - m).array().exp().matrix();
    const Eigen::RowVectorXd z = block.colwise().sum();
    block.array().rowwise() /= z.array();
  }
  return make(y, {ln}, [ln, y, offsets, groups](Node& self) {
    Matrix g(y.rows(), y.cols());
    for (std::size_t k = 0; k < groups; ++k) {
      const int lo = (*offsets)[k], n = (*offsets)[k + 1] - lo;
      if (n == 0) continue;
      const auto yb = y.middleRows(lo, n);
      const auto gb = self.grad.middleRows(lo, n);
      const Eigen::RowVectorXd dot = yb.cwiseProduct(gb).colwise().sum();
      g.middleRows(lo, n) = yb.cwiseProduct((gb.rowwise() - dot).matrix());
    }
    ln->accumulate(g);
  });
}

Var segment_weighted_sum(const Var& weights, const Var& values,
                         std::shared_ptr<const std::vector<int>> offsets) {
  check(weights.rows() == values.rows(), "segment_weighted_sum: row mismatch");
  check(!offsets->empty() && offsets->back() == values.rows(), "segment_weighted_sum: bad offsets");
  const int heads = static_cast<int>(weights.cols());
  check(heads > 0 && values.cols() % heads == 0, "segment_weighted_sum: head mismatch");
  auto wn = weights.node(), vn = values.node();
  const Eigen::Index dh = values.cols() / heads;
  const std::size_t groups = offsets->size() - 1;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(groups), values.cols());
  for (std::size_t g = 0; g < groups; ++g)
    for (int s = (*offsets)[g]; s < (*offsets)[g + 1]; ++s)
      for (int h = 0; h < heads; ++h)
        out.row(g).segment(h * dh, dh) += weights.value()(s, h) * values.value().row(s).segment(h * dh, dh);
  return make(std::move(out), {wn, vn}, [wn, vn, offsets, groups, heads, dh](Node& self) {
    Matrix gw, gv;
    if (wn->requires_grad) gw = Matrix::Zero(wn->value.rows(), wn->value.cols());
    if (vn->requires_grad) gv = Matrix::Zero(vn->value.rows(), vn->value.cols());
    for (std::size_t g = 0; g < groups; ++g)
      for (int s = (*offsets)[g]; s < (*offsets)[g + 1]; ++s)
        for (int h = 0; h < heads; ++h) {
          const auto go = self.grad.row(g).segment(h * dh, dh);
          if (wn->requires_grad) gw(s, h) += go.dot(vn->value.row(s).segment(h * dh, dh));
          if (vn->requires_grad) gv.row(s).segment(h * dh, dh) += wn->value(s, h) * go;
        }
    if (wn->requires_grad) wn->accumulate(gw);
    if (vn->requires_grad) vn->accumulate(gv);
  });
}

}  // namespace redformer::ag
