#pragma once

// Dense 2-D tensors with reverse-mode automatic differentiation on a
// per-run tape (define-by-run). backward() emits its results as ordinary
// graph nodes, so a later backward() can differentiate through them —
// that is what makes second-order meta-gradients possible.
//
// Conventions: everything is a row-major matrix. Scalars are 1x1, row
// vectors 1xd. Elementwise ops broadcast dimensions of size 1.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coldrec/error.hpp"

namespace coldrec {

class Graph;

enum class OpKind : uint8_t {
  constant,
  variable,
  add,
  sub,
  mul,
  divide,
  scale,
  matmul,
  transpose,
  relu,
  sigmoid,
  gtz_mask,       // 1 where x > 0 (relu subgradient at 0 is 0)
  clamp,          // clamp(x, a0, a1)
  interval_mask,  // 1 where a0 < x < a1
  softmax_rows,
  concat_cols,
  concat_rows,
  slice_cols,
  slice_rows,
  pad_cols,
  pad_rows,
  gather_rows,
  scatter_rows,
  reduce_sum,   // i0 = axis, keeps the reduced dimension as 1
  reduce_mean,
  broadcast_to,
  loss_mse,
  loss_bce,
};

enum class LossKind { mse, bce };

const char* op_name(OpKind k);

class Tensor {
 public:
  Tensor() : v_(1, 0.0) {}
  Tensor(int rows, int cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }
  static Tensor row(std::vector<double> values);
  static Tensor zeros(int rows, int cols);
  static Tensor full(int rows, int cols, double fill);

  int rows() const;
  int cols() const;
  int numel() const { return rows() * cols(); }
  bool is_scalar() const { return numel() == 1; }

  const std::vector<double>& values() const;  // invalidated by further op emission
  double at(int r, int c) const;
  double item() const;

  bool attached() const { return g_ != nullptr; }
  Graph* graph() const { return g_; }
  int node() const { return node_; }

  // value copy with no graph identity
  Tensor detached() const;

 private:
  friend class Graph;
  Tensor(Graph* g, int node) : g_(g), node_(node) {}

  Graph* g_ = nullptr;
  int node_ = -1;
  int rows_ = 1, cols_ = 1;
  std::vector<double> v_;  // only used when detached
};

struct Node {
  OpKind op;
  int rows = 1, cols = 1;
  std::vector<int> inputs;
  std::vector<int> idx;  // gather / scatter row indices
  double a0 = 0, a1 = 0;
  int i0 = 0, i1 = 0;
  std::vector<double> val;
};

class Graph {
 public:
  Tensor variable(const Tensor& init);
  Tensor constant(const Tensor& init);
  Tensor constant(int rows, int cols, double fill);

  size_t size() const { return nodes_.size(); }
  void reserve(size_t n) { nodes_.reserve(n); }
  const Node& node(int id) const { return nodes_[id]; }
  Tensor handle(int id) { return Tensor(this, id); }

  // Gradients of a scalar output with respect to wrt, one result per
  // entry, in order. Non-ancestors get a zero tensor. Results are nodes
  // of this graph.
  std::vector<Tensor> backward(const Tensor& output, const std::vector<Tensor>& wrt);

 private:
  friend Tensor emit_op(Graph* g, Node n, const std::vector<Tensor>& ins);
  int emit(Node n, const std::vector<int>& input_ids);
  void add_vjps(int id, int adj_id, std::vector<int>& adj);
  int accumulate(int slot, int contribution, std::vector<int>& adj);
  Tensor reduce_to(Tensor grad, int rows, int cols);

  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------
// Detached inputs evaluate eagerly with no tape; if any input is attached,
// the op is recorded in that graph (mixing graphs is an error).

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor softmax_rows(const Tensor& x);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_cols(const Tensor& x, int offset, int width);
Tensor slice_rows(const Tensor& x, int offset, int height);
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);
Tensor scatter_rows(const Tensor& x, const std::vector<int>& indices, int rows);
Tensor reduce_sum(const Tensor& x, int axis);
Tensor reduce_mean(const Tensor& x, int axis);
Tensor broadcast_to(const Tensor& x, int rows, int cols);
Tensor loss(LossKind kind, const Tensor& pred, const Tensor& target);

inline std::vector<Tensor> backward(const Tensor& output, const std::vector<Tensor>& wrt) {
  if (!output.attached()) throw ShapeError("backward: output is a detached constant");
  return output.graph()->backward(output, wrt);
}

// Max relative error between backward() and central finite differences,
// coordinate-wise, denominator max(1, |analytic|, |numeric|). f must be a
// pure function of its input so it can be re-evaluated detached.
double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                      double step);

}  // namespace coldrec
