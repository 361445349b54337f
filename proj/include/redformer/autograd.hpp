#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every model tensor is a 2-D matrix (rows = cells/pixels/queries,
// cols = channels); higher-rank tensors are flattened by their owners.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace redformer::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Matrix value);
  static Var leaf(Matrix value, bool requires_grad);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(root)/d(root) = 1 and propagates to every ancestor that requires a
// gradient. Leaf gradients accumulate across calls until zero_grad().
void backward(const Var& root);

// A copy of `v`'s value that blocks gradient flow.
Var detach(const Var& v);

Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);      // elementwise
Var add_bias(const Var& a, const Var& bias);  // bias is 1 x cols, broadcast over rows
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var abs(const Var& a);
// log(1 + exp(a)), evaluated stably.
Var softplus(const Var& a);
Var sum(const Var& a);        // 1 x 1
Var mean_rows(const Var& a);  // 1 x cols
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// Row r of the result is row idx[r] of `a`; idx < 0 yields a zero row.
Var gather_rows(const Var& a, std::vector<int> idx);
// Multiplies every row r by the constant factor[r].
Var scale_rows(const Var& a, std::vector<double> factor);
Var sparse_matmul(std::shared_ptr<const SparseMatrix> s, const Var& a);
Var vconcat(std::span<const Var> parts);
Var hconcat(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
// Sum of weight[k] * a(entries[k].first, entries[k].second).
Var pick_sum(const Var& a, std::vector<std::pair<int, int>> entries, std::vector<double> weights);
// Convolution patch extraction: result row r concatenates rows table(r, k),
// k = 0..taps-1, of `a` (negative index = zero padding). Result is
// rows(table) x (taps * cols(a)).
Var patch_gather(const Var& a, std::shared_ptr<const Eigen::MatrixXi> table);

// Multi-head helpers for attention over variable-size key sets. Samples are
// grouped into contiguous segments [offsets[g], offsets[g+1]).
// head_dot: out(s, h) = sum_{c in head h} a(s, c) * b(s, c) * s.
Var head_dot(const Var& a, const Var& b, int heads, double scale_factor);
Var segment_softmax(const Var& logits, std::shared_ptr<const std::vector<int>> offsets);
// out(g, c) = sum_{s in g} weights(s, head(c)) * values(s, c).
Var segment_weighted_sum(const Var& weights, const Var& values,
                         std::shared_ptr<const std::vector<int>> offsets);

}  // namespace redformer::ag
