#include "coldrec/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>

namespace coldrec {

namespace {

struct View {
  int rows = 1, cols = 1;
  const double* p = nullptr;
  int numel() const { return rows * cols; }
};

std::string shape_str(int r, int c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

std::string shape_str(const View& v) { return shape_str(v.rows, v.cols); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// broadcast shape for elementwise binaries: each dim equal or 1
void broadcast_shape(const View& a, const View& b, const char* op, int& r, int& c) {
  bool rok = a.rows == b.rows || a.rows == 1 || b.rows == 1;
  bool cok = a.cols == b.cols || a.cols == 1 || b.cols == 1;
  if (!rok || !cok)
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " do not broadcast");
  r = std::max(a.rows, b.rows);
  c = std::max(a.cols, b.cols);
}

template <class F>
void elementwise(Node& n, const View& a, const View& b, const char* op, F f) {
  int r, c;
  broadcast_shape(a, b, op, r, c);
  n.rows = r;
  n.cols = c;
  n.val.resize(static_cast<size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    const double* pa = a.p + static_cast<size_t>(a.rows == 1 ? 0 : i) * a.cols;
    const double* pb = b.p + static_cast<size_t>(b.rows == 1 ? 0 : i) * b.cols;
    double* po = n.val.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j)
      po[j] = f(pa[a.cols == 1 ? 0 : j], pb[b.cols == 1 ? 0 : j]);
  }
}

constexpr double kBceEps = 1e-12;

// Computes n.val (and output shape) from the input views. Shared by the
// taped and the detached execution paths.
void compute(Node& n, const std::vector<View>& in) {
  switch (n.op) {
    case OpKind::constant:
    case OpKind::variable:
      break;  // val already set
    case OpKind::add:
      elementwise(n, in[0], in[1], "add", [](double x, double y) { return x + y; });
      break;
    case OpKind::sub:
      elementwise(n, in[0], in[1], "subtract", [](double x, double y) { return x - y; });
      break;
    case OpKind::mul:
      elementwise(n, in[0], in[1], "multiply", [](double x, double y) { return x * y; });
      break;
    case OpKind::divide:
      elementwise(n, in[0], in[1], "divide", [](double x, double y) { return x / y; });
      break;
    case OpKind::scale: {
      const View& a = in[0];
      n.rows = a.rows;
      n.cols = a.cols;
      n.val.assign(a.p, a.p + a.numel());
      for (double& v : n.val) v *= n.a0;
      break;
    }
    case OpKind::matmul: {
      const View& a = in[0];
      const View& b = in[1];
      if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a) + " x " +
                         shape_str(b));
      n.rows = a.rows;
      n.cols = b.cols;
      n.val.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
      for (int i = 0; i < a.rows; ++i) {
        const double* pa = a.p + static_cast<size_t>(i) * a.cols;
        double* po = n.val.data() + static_cast<size_t>(i) * n.cols;
        for (int k = 0; k < a.cols; ++k) {
          double av = pa[k];
          if (av == 0.0) continue;
          const double* pb = b.p + static_cast<size_t>(k) * b.cols;
          for (int j = 0; j < b.cols; ++j) po[j] += av * pb[j];
        }
      }
      break;
    }
    case OpKind::transpose: {
      const View& a = in[0];
      n.rows = a.cols;
      n.cols = a.rows;
      n.val.resize(a.numel());
      for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j)
          n.val[static_cast<size_t>(j) * n.cols + i] = a.p[static_cast<size_t>(i) * a.cols + j];
      break;
    }
    case OpKind::relu: {
      const View& a = in[0];
      n.rows = a.rows;
      n.cols = a.cols;
      n.val.resize(a.numel());
      for (int i = 0; i < a.numel(); ++i) n.val[i] = a.p[i] > 0 ? a.p[i] : 0.0;
      break;
    }
    case OpKind::sigmoid: {
      const View& a = in[0];
      n.rows = a.rows;
      n.cols = a.cols;
      n.val.resize(a.numel());
      for (int i = 0; i < a.numel(); ++i) {
        double x = a.p[i];
        if (x >= 0) {
          n.val[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
          double e = std::exp(x);
          n.val[i] = e / (1.0 + e);
        }
      }
      break;
    }
    case OpKind::gtz_mask: {
      const View& a = in[0];
      n.rows = a.rows;
      n.cols = a.cols;
      n.val.resize(a.numel());
      for (int i = 0; i < a.numel(); ++i) n.val[i] = a.p[i] > 0 ? 1.0 : 0.0;
      break;
    }
    case OpKind::clamp: {
      const View& a = in[0];
      n.rows = a.rows;
      n.cols = a.cols;
      n.val.resize(a.numel());
      for (int i = 0; i < a.numel(); ++i) n.val[i] = std::min(std::max(a.p[i], n.a0), n.a1);
      break;
    }
    case OpKind::interval_mask: {
      const View& a = in[0];
      n.rows = a.rows;
      n.cols = a.cols;
      n.val.resize(a.numel());
      for (int i = 0; i < a.numel(); ++i)
        n.val[i] = (a.p[i] > n.a0 && a.p[i] < n.a1) ? 1.0 : 0.0;
      break;
    }
    case OpKind::softmax_rows: {
      const View& a = in[0];
      require(a.cols >= 1, "softmax_rows: empty rows");
      n.rows = a.rows;
      n.cols = a.cols;
      n.val.resize(a.numel());
      for (int i = 0; i < a.rows; ++i) {
        const double* pa = a.p + static_cast<size_t>(i) * a.cols;
        double* po = n.val.data() + static_cast<size_t>(i) * a.cols;
        double m = pa[0];
        for (int j = 1; j < a.cols; ++j) m = std::max(m, pa[j]);
        double s = 0;
        for (int j = 0; j < a.cols; ++j) {
          po[j] = std::exp(pa[j] - m);
          s += po[j];
        }
        for (int j = 0; j < a.cols; ++j) po[j] /= s;
      }
      break;
    }
    case OpKind::concat_cols: {
      int r = in[0].rows, c = 0;
      for (const View& v : in) {
        require(v.rows == r, "concat_cols: row counts differ, " + shape_str(in[0]) + " vs " +
                                 shape_str(v));
        c += v.cols;
      }
      n.rows = r;
      n.cols = c;
      n.val.resize(static_cast<size_t>(r) * c);
      int off = 0;
      for (const View& v : in) {
        for (int i = 0; i < r; ++i)
          std::copy(v.p + static_cast<size_t>(i) * v.cols, v.p + static_cast<size_t>(i + 1) * v.cols,
                    n.val.data() + static_cast<size_t>(i) * c + off);
        off += v.cols;
      }
      break;
    }
    case OpKind::concat_rows: {
      int c = in[0].cols, r = 0;
      for (const View& v : in) {
        require(v.cols == c, "concat_rows: column counts differ, " + shape_str(in[0]) + " vs " +
                                 shape_str(v));
        r += v.rows;
      }
      n.rows = r;
      n.cols = c;
      n.val.clear();
      n.val.reserve(static_cast<size_t>(r) * c);
      for (const View& v : in) n.val.insert(n.val.end(), v.p, v.p + v.numel());
      break;
    }
    case OpKind::slice_cols: {
      const View& a = in[0];
      require(n.i0 >= 0 && n.i1 > 0 && n.i0 + n.i1 <= a.cols,
              "slice_cols: range [" + std::to_string(n.i0) + ", " + std::to_string(n.i0 + n.i1) +
                  ") outside " + shape_str(a));
      n.rows = a.rows;
      n.cols = n.i1;
      n.val.resize(static_cast<size_t>(n.rows) * n.cols);
      for (int i = 0; i < a.rows; ++i)
        std::copy(a.p + static_cast<size_t>(i) * a.cols + n.i0,
                  a.p + static_cast<size_t>(i) * a.cols + n.i0 + n.i1,
                  n.val.data() + static_cast<size_t>(i) * n.cols);
      break;
    }
    case OpKind::slice_rows: {
      const View& a = in[0];
      require(n.i0 >= 0 && n.i1 > 0 && n.i0 + n.i1 <= a.rows,
              "slice_rows: range [" + std::to_string(n.i0) + ", " + std::to_string(n.i0 + n.i1) +
                  ") outside " + shape_str(a));
      n.rows = n.i1;
      n.cols = a.cols;
      n.val.assign(a.p + static_cast<size_t>(n.i0) * a.cols,
                   a.p + static_cast<size_t>(n.i0 + n.i1) * a.cols);
      break;
    }
    case OpKind::pad_cols: {
      const View& a = in[0];
      require(n.i0 >= 0 && n.i0 + a.cols <= n.i1, "pad_cols: slot outside target width");
      n.rows = a.rows;
      n.cols = n.i1;
      n.val.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
      for (int i = 0; i < a.rows; ++i)
        std::copy(a.p + static_cast<size_t>(i) * a.cols, a.p + static_cast<size_t>(i + 1) * a.cols,
                  n.val.data() + static_cast<size_t>(i) * n.cols + n.i0);
      break;
    }
    case OpKind::pad_rows: {
      const View& a = in[0];
      require(n.i0 >= 0 && n.i0 + a.rows <= n.i1, "pad_rows: slot outside target height");
      n.rows = n.i1;
      n.cols = a.cols;
      n.val.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
      std::copy(a.p, a.p + a.numel(), n.val.data() + static_cast<size_t>(n.i0) * a.cols);
      break;
    }
    case OpKind::gather_rows: {
      const View& a = in[0];
      for (int ix : n.idx)
        if (ix < 0 || ix >= a.rows)
          throw LookupError("gather_rows: index " + std::to_string(ix) + " outside table with " +
                            std::to_string(a.rows) + " rows");
      n.rows = static_cast<int>(n.idx.size());
      n.cols = a.cols;
      n.val.resize(static_cast<size_t>(n.rows) * n.cols);
      for (size_t i = 0; i < n.idx.size(); ++i)
        std::copy(a.p + static_cast<size_t>(n.idx[i]) * a.cols,
                  a.p + static_cast<size_t>(n.idx[i] + 1) * a.cols, n.val.data() + i * a.cols);
      break;
    }
    case OpKind::scatter_rows: {
      const View& a = in[0];
      require(static_cast<int>(n.idx.size()) == a.rows,
              "scatter_rows: index count differs from input rows");
      for (int ix : n.idx)
        if (ix < 0 || ix >= n.i0)
          throw LookupError("scatter_rows: index " + std::to_string(ix) + " outside table with " +
                            std::to_string(n.i0) + " rows");
      n.rows = n.i0;
      n.cols = a.cols;
      n.val.assign(static_cast<size_t>(n.rows) * n.cols, 0.0);
      for (size_t i = 0; i < n.idx.size(); ++i) {
        double* po = n.val.data() + static_cast<size_t>(n.idx[i]) * a.cols;
        const double* pa = a.p + i * a.cols;
        for (int j = 0; j < a.cols; ++j) po[j] += pa[j];
      }
      break;
    }
    case OpKind::reduce_sum:
    case OpKind::reduce_mean: {
      const View& a = in[0];
      require(n.i0 == 0 || n.i0 == 1, "reduce: axis must be 0 or 1");
      bool mean = n.op == OpKind::reduce_mean;
      if (n.i0 == 0) {
        n.rows = 1;
        n.cols = a.cols;
        n.val.assign(a.cols, 0.0);
        for (int i = 0; i < a.rows; ++i)
          for (int j = 0; j < a.cols; ++j) n.val[j] += a.p[static_cast<size_t>(i) * a.cols + j];
        if (mean)
          for (double& v : n.val) v /= a.rows;
      } else {
        n.rows = a.rows;
        n.cols = 1;
        n.val.assign(a.rows, 0.0);
        for (int i = 0; i < a.rows; ++i) {
          double s = 0;
          for (int j = 0; j < a.cols; ++j) s += a.p[static_cast<size_t>(i) * a.cols + j];
          n.val[i] = mean ? s / a.cols : s;
        }
      }
      break;
    }
    case OpKind::broadcast_to: {
      const View& a = in[0];
      require((a.rows == n.i0 || a.rows == 1) && (a.cols == n.i1 || a.cols == 1),
              "broadcast_to: " + shape_str(a) + " does not broadcast to " + shape_str(n.i0, n.i1));
      n.rows = n.i0;
      n.cols = n.i1;
      n.val.resize(static_cast<size_t>(n.rows) * n.cols);
      for (int i = 0; i < n.rows; ++i) {
        const double* pa = a.p + static_cast<size_t>(a.rows == 1 ? 0 : i) * a.cols;
        double* po = n.val.data() + static_cast<size_t>(i) * n.cols;
        for (int j = 0; j < n.cols; ++j) po[j] = pa[a.cols == 1 ? 0 : j];
      }
      break;
    }
    case OpKind::loss_mse:
    case OpKind::loss_bce: {
      const View& p = in[0];
      const View& t = in[1];
      if (p.rows != t.rows || p.cols != t.cols)
        throw ShapeError("loss: prediction " + shape_str(p) + " and target " + shape_str(t) +
                         " differ");
      int m = p.numel();
      double acc = 0;
      if (n.op == OpKind::loss_mse) {
        for (int i = 0; i < m; ++i) {
          double d = p.p[i] - t.p[i];
          acc += d * d;
        }
      } else {
        for (int i = 0; i < m; ++i) {
          double y = t.p[i];
          if (y != 0.0 && y != 1.0)
            throw DataError("loss: bce target " + std::to_string(y) + " outside {0,1}");
          double q = std::min(std::max(p.p[i], kBceEps), 1.0 - kBceEps);
          acc -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
        }
      }
      n.rows = 1;
      n.cols = 1;
      n.val.assign(1, acc / m);
      break;
    }
  }
  for (double v : n.val)
    if (!std::isfinite(v))
      throw DivergenceError(std::string("non-finite value produced by ") + op_name(n.op));
}

}  // namespace

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::constant: return "constant";
    case OpKind::variable: return "variable";
    case OpKind::add: return "add";
    case OpKind::sub: return "subtract";
    case OpKind::mul: return "multiply";
    case OpKind::divide: return "divide";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::gtz_mask: return "gtz_mask";
    case OpKind::clamp: return "clamp";
    case OpKind::interval_mask: return "interval_mask";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::pad_cols: return "pad_cols";
    case OpKind::pad_rows: return "pad_rows";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::scatter_rows: return "scatter_rows";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::reduce_mean: return "reduce_mean";
    case OpKind::broadcast_to: return "broadcast_to";
    case OpKind::loss_mse: return "loss_mse";
    case OpKind::loss_bce: return "loss_bce";
  }
  return "?";
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(int rows, int cols, std::vector<double> values) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1)
    throw ShapeError("tensor dimensions must be positive, got " + shape_str(rows, cols));
  if (static_cast<size_t>(rows) * cols != values.size())
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(rows, cols));
  v_ = std::move(values);
}

Tensor Tensor::row(std::vector<double> values) {
  int c = static_cast<int>(values.size());
  return Tensor(1, c, std::move(values));
}

Tensor Tensor::zeros(int rows, int cols) {
  return Tensor(rows, cols, std::vector<double>(static_cast<size_t>(rows) * cols, 0.0));
}

Tensor Tensor::full(int rows, int cols, double fill) {
  return Tensor(rows, cols, std::vector<double>(static_cast<size_t>(rows) * cols, fill));
}

int Tensor::rows() const { return attached() ? g_->node(node_).rows : rows_; }
int Tensor::cols() const { return attached() ? g_->node(node_).cols : cols_; }

const std::vector<double>& Tensor::values() const {
  return attached() ? g_->node(node_).val : v_;
}

double Tensor::at(int r, int c) const { return values()[static_cast<size_t>(r) * cols() + c]; }

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item(): tensor is " + shape_str(rows(), cols()));
  return values()[0];
}

Tensor Tensor::detached() const {
  if (!attached()) return *this;
  return Tensor(rows(), cols(), values());
}

// ---- Graph ------------------------------------------------------------------

int Graph::emit(Node n, const std::vector<int>& input_ids) {
  std::vector<View> views;
  views.reserve(input_ids.size());
  for (int id : input_ids)
    views.push_back({nodes_[id].rows, nodes_[id].cols, nodes_[id].val.data()});
  compute(n, views);
  n.inputs = input_ids;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::variable(const Tensor& init) {
  Node n;
  n.op = OpKind::variable;
  n.rows = init.rows();
  n.cols = init.cols();
  n.val = init.values();
  return handle(emit(std::move(n), {}));
}

Tensor Graph::constant(const Tensor& init) {
  Node n;
  n.op = OpKind::constant;
  n.rows = init.rows();
  n.cols = init.cols();
  n.val = init.values();
  return handle(emit(std::move(n), {}));
}

Tensor Graph::constant(int rows, int cols, double fill) {
  return constant(Tensor::full(rows, cols, fill));
}

// ---- op emission ------------------------------------------------------------

Tensor emit_op(Graph* g, Node n, const std::vector<Tensor>& ins) {
  // pick the graph, if any input is attached
  for (const Tensor& t : ins) {
    if (!t.attached()) continue;
    if (g != nullptr && g != t.graph())
      throw ShapeError(std::string(op_name(n.op)) + ": inputs belong to different graphs");
    g = t.graph();
  }
  if (g == nullptr) {
    // fully detached evaluation
    std::vector<View> views;
    views.reserve(ins.size());
    for (const Tensor& t : ins) views.push_back({t.rows(), t.cols(), t.values().data()});
    compute(n, views);
    return Tensor(n.rows, n.cols, std::move(n.val));
  }
  std::vector<int> ids;
  ids.reserve(ins.size());
  for (const Tensor& t : ins)
    ids.push_back(t.attached() ? t.node() : g->constant(t).node());
  return g->handle(g->emit(std::move(n), ids));
}

namespace {

Tensor emit1(OpKind op, const Tensor& a, double a0 = 0, double a1 = 0, int i0 = 0, int i1 = 0) {
  Node n;
  n.op = op;
  n.a0 = a0;
  n.a1 = a1;
  n.i0 = i0;
  n.i1 = i1;
  return emit_op(nullptr, std::move(n), {a});
}

Tensor emit2(OpKind op, const Tensor& a, const Tensor& b) {
  Node n;
  n.op = op;
  return emit_op(nullptr, std::move(n), {a, b});
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return emit2(OpKind::add, a, b); }
Tensor subtract(const Tensor& a, const Tensor& b) { return emit2(OpKind::sub, a, b); }
Tensor multiply(const Tensor& a, const Tensor& b) { return emit2(OpKind::mul, a, b); }
Tensor divide(const Tensor& a, const Tensor& b) { return emit2(OpKind::divide, a, b); }
Tensor matmul(const Tensor& a, const Tensor& b) { return emit2(OpKind::matmul, a, b); }
Tensor scale(const Tensor& x, double c) { return emit1(OpKind::scale, x, c); }
Tensor transpose(const Tensor& x) { return emit1(OpKind::transpose, x); }
Tensor relu(const Tensor& x) { return emit1(OpKind::relu, x); }
Tensor sigmoid(const Tensor& x) { return emit1(OpKind::sigmoid, x); }
Tensor clamp(const Tensor& x, double lo, double hi) { return emit1(OpKind::clamp, x, lo, hi); }
Tensor softmax_rows(const Tensor& x) { return emit1(OpKind::softmax_rows, x); }

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: no inputs");
  Node n;
  n.op = OpKind::concat_cols;
  return emit_op(nullptr, std::move(n), xs);
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows: no inputs");
  Node n;
  n.op = OpKind::concat_rows;
  return emit_op(nullptr, std::move(n), xs);
}

Tensor slice_cols(const Tensor& x, int offset, int width) {
  return emit1(OpKind::slice_cols, x, 0, 0, offset, width);
}

Tensor slice_rows(const Tensor& x, int offset, int height) {
  return emit1(OpKind::slice_rows, x, 0, 0, offset, height);
}

namespace {
Tensor pad_cols(const Tensor& x, int offset, int total) {
  return emit1(OpKind::pad_cols, x, 0, 0, offset, total);
}
Tensor pad_rows(const Tensor& x, int offset, int total) {
  return emit1(OpKind::pad_rows, x, 0, 0, offset, total);
}
Tensor interval_mask(const Tensor& x, double lo, double hi) {
  return emit1(OpKind::interval_mask, x, lo, hi);
}
Tensor gtz_mask(const Tensor& x) { return emit1(OpKind::gtz_mask, x); }
}  // namespace

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  Node n;
  n.op = OpKind::gather_rows;
  n.idx = indices;
  return emit_op(nullptr, std::move(n), {table});
}

Tensor scatter_rows(const Tensor& x, const std::vector<int>& indices, int rows) {
  Node n;
  n.op = OpKind::scatter_rows;
  n.idx = indices;
  n.i0 = rows;
  return emit_op(nullptr, std::move(n), {x});
}

Tensor reduce_sum(const Tensor& x, int axis) { return emit1(OpKind::reduce_sum, x, 0, 0, axis); }
Tensor reduce_mean(const Tensor& x, int axis) { return emit1(OpKind::reduce_mean, x, 0, 0, axis); }

Tensor broadcast_to(const Tensor& x, int rows, int cols) {
  return emit1(OpKind::broadcast_to, x, 0, 0, rows, cols);
}

Tensor loss(LossKind kind, const Tensor& pred, const Tensor& target) {
  return emit2(kind == LossKind::mse ? OpKind::loss_mse : OpKind::loss_bce, pred, target);
}

// ---- backward ----------------------------------------------------------------

Tensor Graph::reduce_to(Tensor grad, int rows, int cols) {
  if (grad.rows() != rows && rows == 1) grad = coldrec::reduce_sum(grad, 0);
  if (grad.cols() != cols && cols == 1) grad = coldrec::reduce_sum(grad, 1);
  return grad;
}

int Graph::accumulate(int slot, int contribution, std::vector<int>& adj) {
  if (adj[slot] < 0)
    adj[slot] = contribution;
  else
    adj[slot] = coldrec::add(handle(adj[slot]), handle(contribution)).node();
  return adj[slot];
}

void Graph::add_vjps(int id, int adj_id, std::vector<int>& adj) {
  // emission below may reallocate nodes_, so take a copy of the node
  const Node n = nodes_[id];
  Tensor g = handle(adj_id);
  auto in = [&](size_t k) { return handle(n.inputs[k]); };
  auto put = [&](size_t k, Tensor contribution) {
    accumulate(n.inputs[k], contribution.node(), adj);
  };
  switch (n.op) {
    case OpKind::constant:
    case OpKind::variable:
    case OpKind::gtz_mask:
    case OpKind::interval_mask:
      break;
    case OpKind::add: {
      Tensor a = in(0), b = in(1);
      put(0, reduce_to(g, a.rows(), a.cols()));
      put(1, reduce_to(g, b.rows(), b.cols()));
      break;
    }
    case OpKind::sub: {
      Tensor a = in(0), b = in(1);
      put(0, reduce_to(g, a.rows(), a.cols()));
      put(1, reduce_to(coldrec::scale(g, -1.0), b.rows(), b.cols()));
      break;
    }
    case OpKind::mul: {
      Tensor a = in(0), b = in(1);
      put(0, reduce_to(coldrec::multiply(g, b), a.rows(), a.cols()));
      put(1, reduce_to(coldrec::multiply(g, a), b.rows(), b.cols()));
      break;
    }
    case OpKind::divide: {
      Tensor a = in(0), b = in(1);
      put(0, reduce_to(coldrec::divide(g, b), a.rows(), a.cols()));
      Tensor t = coldrec::multiply(g, coldrec::divide(a, coldrec::multiply(b, b)));
      put(1, reduce_to(coldrec::scale(t, -1.0), b.rows(), b.cols()));
      break;
    }
    case OpKind::scale:
      put(0, coldrec::scale(g, n.a0));
      break;
    case OpKind::matmul: {
      Tensor a = in(0), b = in(1);
      put(0, coldrec::matmul(g, coldrec::transpose(b)));
      put(1, coldrec::matmul(coldrec::transpose(a), g));
      break;
    }
    case OpKind::transpose:
      put(0, coldrec::transpose(g));
      break;
    case OpKind::relu:
      put(0, coldrec::multiply(g, gtz_mask(in(0))));
      break;
    case OpKind::sigmoid: {
      Tensor y = handle(id);
      Tensor one = constant(n.rows, n.cols, 1.0);
      put(0, coldrec::multiply(g, coldrec::multiply(y, coldrec::subtract(one, y))));
      break;
    }
    case OpKind::clamp:
      put(0, coldrec::multiply(g, interval_mask(in(0), n.a0, n.a1)));
      break;
    case OpKind::softmax_rows: {
      Tensor y = handle(id);
      Tensor s = coldrec::reduce_sum(coldrec::multiply(g, y), 1);  // [r x 1]
      put(0, coldrec::multiply(y, coldrec::subtract(g, s)));
      break;
    }
    case OpKind::concat_cols: {
      int off = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        int w = nodes_[n.inputs[k]].cols;
        put(k, coldrec::slice_cols(g, off, w));
        off += w;
      }
      break;
    }
    case OpKind::concat_rows: {
      int off = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        int h = nodes_[n.inputs[k]].rows;
        put(k, coldrec::slice_rows(g, off, h));
        off += h;
      }
      break;
    }
    case OpKind::slice_cols:
      put(0, pad_cols(g, n.i0, nodes_[n.inputs[0]].cols));
      break;
    case OpKind::slice_rows:
      put(0, pad_rows(g, n.i0, nodes_[n.inputs[0]].rows));
      break;
    case OpKind::pad_cols:
      put(0, coldrec::slice_cols(g, n.i0, nodes_[n.inputs[0]].cols));
      break;
    case OpKind::pad_rows:
      put(0, coldrec::slice_rows(g, n.i0, nodes_[n.inputs[0]].rows));
      break;
    case OpKind::gather_rows:
      put(0, coldrec::scatter_rows(g, n.idx, nodes_[n.inputs[0]].rows));
      break;
    case OpKind::scatter_rows:
      put(0, coldrec::gather_rows(g, n.idx));
      break;
    case OpKind::reduce_sum: {
      const Node& x = nodes_[n.inputs[0]];
      put(0, coldrec::broadcast_to(g, x.rows, x.cols));
      break;
    }
    case OpKind::reduce_mean: {
      const Node& x = nodes_[n.inputs[0]];
      double len = n.i0 == 0 ? x.rows : x.cols;
      put(0, coldrec::scale(coldrec::broadcast_to(g, x.rows, x.cols), 1.0 / len));
      break;
    }
    case OpKind::broadcast_to: {
      const Node& x = nodes_[n.inputs[0]];
      put(0, reduce_to(g, x.rows, x.cols));
      break;
    }
    case OpKind::loss_mse: {
      Tensor p = in(0), t = in(1);
      double inv = 1.0 / p.numel();
      Tensor bg = coldrec::broadcast_to(g, p.rows(), p.cols());
      Tensor d = coldrec::multiply(bg, coldrec::subtract(p, t));
      put(0, coldrec::scale(d, 2.0 * inv));
      put(1, coldrec::scale(d, -2.0 * inv));
      break;
    }
    case OpKind::loss_bce: {
      // d/dp of -mean(t ln c + (1-t) ln(1-c)), c = clamp(p, eps, 1-eps).
      // Targets are labels; no gradient is defined for them.
      Tensor p = in(0), t = in(1);
      double inv = 1.0 / p.numel();
      Tensor c = coldrec::clamp(p, kBceEps, 1.0 - kBceEps);
      Tensor one = constant(p.rows(), p.cols(), 1.0);
      Tensor ratio = coldrec::divide(coldrec::subtract(c, t),
                                     coldrec::multiply(c, coldrec::subtract(one, c)));
      Tensor bg = coldrec::broadcast_to(g, p.rows(), p.cols());
      Tensor dm = coldrec::multiply(coldrec::multiply(bg, ratio),
                                    interval_mask(p, kBceEps, 1.0 - kBceEps));
      put(0, coldrec::scale(dm, inv));
      break;
    }
  }
}

std::vector<Tensor> Graph::backward(const Tensor& output, const std::vector<Tensor>& wrt) {
  if (!output.attached() || output.graph() != this)
    throw ShapeError("backward: output does not belong to this graph");
  if (!output.is_scalar())
    throw ShapeError("backward: output must be scalar, got " +
                     shape_str(output.rows(), output.cols()));
  for (const Tensor& w : wrt)
    if (!w.attached() || w.graph() != this)
      throw ShapeError("backward: wrt tensor does not belong to this graph");

  int oid = output.node();
  std::vector<char> ancestor(oid + 1, 0);
  ancestor[oid] = 1;
  for (int id = oid; id >= 0; --id) {
    if (!ancestor[id]) continue;
    for (int in : nodes_[id].inputs) ancestor[in] = 1;
  }

  std::vector<int> adj(oid + 1, -1);
  adj[oid] = constant(1, 1, 1.0).node();
  for (int id = oid; id >= 0; --id) {
    if (!ancestor[id] || adj[id] < 0) continue;
    add_vjps(id, adj[id], adj);
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    int id = w.node();
    if (id <= oid && adj[id] >= 0)
      out.push_back(handle(adj[id]));
    else
      out.push_back(constant(w.rows(), w.cols(), 0.0));
  }
  return out;
}

// ---- gradient checking ---------------------------------------------------------

double check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                      double step) {
  if (step <= 0) throw ShapeError("check_gradient: step must be positive");
  Graph g;
  Tensor x = g.variable(point.detached());
  Tensor y = f(x);
  if (!y.is_scalar()) throw ShapeError("check_gradient: f must return a scalar");
  std::vector<double> analytic = g.backward(y, {x})[0].values();

  std::vector<double> base = point.values();
  double worst = 0;
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<double> vp = base, vm = base;
    vp[i] += step;
    vm[i] -= step;
    double fp = f(Tensor(point.rows(), point.cols(), vp)).item();
    double fm = f(Tensor(point.rows(), point.cols(), vm)).item();
    double numeric = (fp - fm) / (2.0 * step);
    double denom = std::max(1.0, std::max(std::fabs(analytic[i]), std::fabs(numeric)));
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace coldrec
