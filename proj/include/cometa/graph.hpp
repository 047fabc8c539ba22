#pragma once

// Define-by-run reverse-mode differentiation over dense 2-D tensors.
//
// Every vector-Jacobian product is itself expressed with graph ops, so a
// gradient obtained with create_graph = true is an ordinary node and can be
// differentiated again (needed for the one-step inner update of the shift
// generator).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cometa/bce.hpp"
#include "cometa/error.hpp"
#include "cometa/tensor.hpp"

namespace cometa::ad {

enum class Op : std::uint8_t {
  Input,
  Leaf,
  MatMul,
  Transpose,
  Add,
  Mul,
  Scale,
  Concat,
  Slice,
  Relu,
  Sigmoid,
  Mean,
  Sum,
  SumRows,
  Broadcast,
  Clamp,
  Reciprocal,
  Pool,
  PoolT,
  Bce,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::SumRows: return "sum_rows";
    case Op::Broadcast: return "broadcast";
    case Op::Clamp: return "clamp";
    case Op::Reciprocal: return "reciprocal";
    case Op::Pool: return "pool";
    case Op::PoolT: return "pool_t";
    case Op::Bce: return "bce";
  }
  return "?";
}

/// Sparse row pooling in CSR form: output row r is
/// sum_k weights[k] * table[indices[k]] for k in [offsets[r], offsets[r+1]).
/// Embedding lookup is the one-hot case; multi-valued fields use mean weights.
struct Pooling {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> indices;
  std::vector<double> weights;

  std::size_t rows() const { return offsets.size() - 1; }

  void add_single(std::size_t index) {
    indices.push_back(index);
    weights.push_back(1.0);
    offsets.push_back(indices.size());
  }

  /// Mean of the listed rows; an empty list yields a zero row.
  void add_mean(std::span<const std::size_t> ids) {
    const double w = ids.empty() ? 0.0 : 1.0 / static_cast<double>(ids.size());
    for (std::size_t id : ids) {
      indices.push_back(id);
      weights.push_back(w);
    }
    offsets.push_back(indices.size());
  }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  explicit operator bool() const { return graph_ != nullptr; }

  const Tensor& value() const;
  Shape shape() const;
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

Var add(Var a, Var b);

struct Node {
  std::size_t id = 0;
  Op op = Op::Leaf;
  std::vector<std::size_t> parents;
  Shape shape;
  Tensor value;  // empty while an upstream input is unfed
  bool requires_grad = false;
  std::string name;

  // Op attributes.
  double a = 0.0;  // scale factor, clamp low
  double b = 0.0;  // scale offset, clamp high
  std::size_t begin = 0;  // slice begin; pool_t output rows
  std::size_t end = 0;    // slice end
  std::vector<std::size_t> segments;  // concat column offsets, size parents + 1
  std::shared_ptr<const Pooling> pooling;
  std::shared_ptr<const std::vector<double>> labels;
};

/// Node id -> gradient of identical shape. Ordered for deterministic iteration.
using GradientMap = std::map<std::size_t, Tensor>;
using Feeds = std::unordered_map<std::size_t, Tensor>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Placeholder that must be fed before evaluation.
  Var input(Shape shape, std::string name) {
    Node n;
    n.op = Op::Input;
    n.shape = shape;
    n.name = std::move(name);
    return push(std::move(n));
  }

  /// Trainable leaf.
  Var param(Tensor value, std::string name = {}) { return leaf(std::move(value), true, std::move(name)); }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value, std::string name = {}) {
    return leaf(std::move(value), false, std::move(name));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Node& node(Var v) const { return nodes_.at(v.id()); }
  std::size_t size() const { return nodes_.size(); }

  /// Re-evaluates everything the root depends on, feeding inputs by node id.
  Tensor forward(Var root, const Feeds& feeds) {
    own(root);
    std::vector<char> needed(root.id() + 1, 0);
    needed[root.id()] = 1;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      if (!needed[i]) continue;
      for (std::size_t p : nodes_[i].parents) needed[p] = 1;
    }
    for (std::size_t i = 0; i <= root.id(); ++i) {
      if (!needed[i]) continue;
      Node& n = nodes_[i];
      if (n.op == Op::Input) {
        auto it = feeds.find(i);
        if (it == feeds.end()) {
          throw MissingFeedError("node " + std::to_string(i) + " (input '" + n.name +
                                 "') was not fed");
        }
        if (it->second.shape() != n.shape) {
          throw ShapeError("node " + std::to_string(i) + " (input '" + n.name + "') fed " +
                           it->second.shape().str() + ", expected " + n.shape.str());
        }
        n.value = it->second;
      } else if (n.op != Op::Leaf) {
        n.value = compute(n);
      }
    }
    return nodes_[root.id()].value;
  }

  /// Gradients of a scalar loss with respect to `wrt`. With create_graph the
  /// returned gradients are differentiable nodes of this graph.
  std::vector<Var> grad(Var loss, std::span<const Var> wrt, bool create_graph) {
    own(loss);
    const Node& ln = nodes_[loss.id()];
    if (ln.shape != Shape{1, 1}) {
      throw ShapeError("gradient requested of non-scalar node " + std::to_string(loss.id()) +
                       " with shape " + ln.shape.str());
    }
    if (ln.value.empty()) {
      throw Error("gradient requested before node " + std::to_string(loss.id()) + " was evaluated");
    }

    const std::size_t count = loss.id() + 1;
    std::vector<char> needed(count, 0);
    for (const Var& w : wrt) {
      own(w);
      if (w.id() < count) needed[w.id()] = 1;
    }
    for (std::size_t i = 0; i < count; ++i) {
      if (needed[i]) continue;
      for (std::size_t p : nodes_[i].parents) {
        if (needed[p]) {
          needed[i] = 1;
          break;
        }
      }
    }

    struct RecordGuard {
      bool& flag;
      bool saved;
      ~RecordGuard() { flag = saved; }
    } guard{record_grad_, record_grad_};
    record_grad_ = create_graph;

    std::vector<std::optional<std::size_t>> grads(count);
    if (needed[loss.id()]) grads[loss.id()] = constant(Tensor::scalar(1.0)).id();

    for (std::size_t i = count; i-- > 0;) {
      if (!needed[i] || !grads[i]) continue;
      const Op op = nodes_[i].op;
      if (op == Op::Input || op == Op::Leaf) continue;
      const std::vector<std::size_t> parents = nodes_[i].parents;
      const Var g(this, *grads[i]);
      for (std::size_t k = 0; k < parents.size(); ++k) {
        const std::size_t p = parents[k];
        if (!needed[p]) continue;
        const Var contribution = vjp(i, k, g);
        grads[p] = grads[p] ? add(Var(this, *grads[p]), contribution).id() : contribution.id();
      }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
      if (w.id() < count && grads[w.id()]) {
        out.push_back(Var(this, *grads[w.id()]));
      } else {
        out.push_back(constant(Tensor(nodes_[w.id()].shape)));
      }
    }
    return out;
  }

  /// Gradients for every trainable leaf created before the loss; leaves the
  /// loss does not depend on get zeros.
  GradientMap backward(Var loss) {
    std::vector<Var> leaves;
    for (std::size_t i = 0; i <= loss.id() && i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::Leaf && nodes_[i].requires_grad) leaves.push_back(Var(this, i));
    }
    const std::vector<Var> gs = grad(loss, leaves, false);
    GradientMap out;
    for (std::size_t k = 0; k < leaves.size(); ++k) out.emplace(leaves[k].id(), gs[k].value());
    return out;
  }

  // Op constructors. Prefer the free functions below.
  Var make(Node n) {
    for (std::size_t p : n.parents) {
      if (p >= nodes_.size()) throw IndexError("unknown parent node " + std::to_string(p));
    }
    n.id = nodes_.size();
    n.shape = infer_shape(n);
    n.requires_grad = false;
    if (record_grad_) {
      for (std::size_t p : n.parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    }
    bool ready = true;
    for (std::size_t p : n.parents) ready = ready && !nodes_[p].value.empty();
    if (ready) n.value = compute(n);
    return push(std::move(n));
  }

  void own(Var v) const {
    if (v.graph() != this || v.id() >= nodes_.size()) {
      throw Error("variable does not belong to this graph");
    }
  }

 private:
  Var leaf(Tensor value, bool trainable, std::string name) {
    if (value.empty()) throw ShapeError("leaf '" + name + "' has no value");
    Node n;
    n.op = Op::Leaf;
    n.shape = value.shape();
    n.value = std::move(value);
    n.requires_grad = trainable;
    n.name = std::move(name);
    return push(std::move(n));
  }

  Var push(Node n) {
    n.id = nodes_.size();
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  [[noreturn]] void shape_fail(const Node& n, const std::string& what) const {
    throw ShapeError("node " + std::to_string(n.id) + " (" + op_name(n.op) + "): " + what);
  }

  Shape pshape(const Node& n, std::size_t k) const { return nodes_[n.parents[k]].shape; }

  static bool broadcastable(Shape target, Shape src) {
    return src == target || (src.rows == 1 && src.cols == target.cols) ||
           (src.rows == 1 && src.cols == 1);
  }

  Shape infer_shape(const Node& n) const {
    auto arity = [&](std::size_t k) {
      if (n.parents.size() != k) {
        shape_fail(n, "expected " + std::to_string(k) + " operands, got " +
                          std::to_string(n.parents.size()));
      }
    };
    switch (n.op) {
      case Op::Input:
      case Op::Leaf:
        return n.shape;
      case Op::MatMul: {
        arity(2);
        const Shape a = pshape(n, 0), b = pshape(n, 1);
        if (a.cols != b.rows) shape_fail(n, "inner dimensions " + a.str() + " x " + b.str());
        return {a.rows, b.cols};
      }
      case Op::Transpose: {
        arity(1);
        const Shape a = pshape(n, 0);
        return {a.cols, a.rows};
      }
      case Op::Add:
      case Op::Mul: {
        arity(2);
        const Shape a = pshape(n, 0), b = pshape(n, 1);
        if (!broadcastable(a, b)) shape_fail(n, "cannot broadcast " + b.str() + " to " + a.str());
        return a;
      }
      case Op::Scale:
      case Op::Relu:
      case Op::Sigmoid:
      case Op::Reciprocal:
        arity(1);
        return pshape(n, 0);
      case Op::Clamp:
        arity(1);
        if (!(n.a <= n.b)) shape_fail(n, "clamp bounds out of order");
        return pshape(n, 0);
      case Op::Concat: {
        if (n.parents.empty()) shape_fail(n, "concat of nothing");
        const std::size_t rows = pshape(n, 0).rows;
        if (n.segments.size() != n.parents.size() + 1) shape_fail(n, "segment table size");
        std::size_t cols = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          const Shape s = pshape(n, k);
          if (s.rows != rows) {
            shape_fail(n, "operand " + std::to_string(k) + " has " + std::to_string(s.rows) +
                              " rows, expected " + std::to_string(rows));
          }
          if (n.segments[k] != cols) shape_fail(n, "segment offsets disagree with operand widths");
          cols += s.cols;
        }
        if (n.segments.back() != cols) shape_fail(n, "segment offsets disagree with operand widths");
        return {rows, cols};
      }
      case Op::Slice: {
        arity(1);
        const Shape a = pshape(n, 0);
        if (!(n.begin < n.end && n.end <= a.cols)) {
          shape_fail(n, "column range [" + std::to_string(n.begin) + ", " + std::to_string(n.end) +
                            ") outside " + a.str());
        }
        return {a.rows, n.end - n.begin};
      }
      case Op::Mean:
      case Op::Sum:
        arity(1);
        return {1, 1};
      case Op::SumRows:
        arity(1);
        return {1, pshape(n, 0).cols};
      case Op::Broadcast: {
        arity(1);
        if (!broadcastable(n.shape, pshape(n, 0))) {
          shape_fail(n, "cannot broadcast " + pshape(n, 0).str() + " to " + n.shape.str());
        }
        return n.shape;
      }
      case Op::Pool: {
        arity(1);
        if (!n.pooling || n.pooling->rows() == 0) shape_fail(n, "empty pooling");
        const Shape t = pshape(n, 0);
        for (std::size_t idx : n.pooling->indices) {
          if (idx >= t.rows) {
            throw IndexError("node " + std::to_string(n.id) + " (pool): row " + std::to_string(idx) +
                             " outside table of " + std::to_string(t.rows) + " rows");
          }
        }
        return {n.pooling->rows(), t.cols};
      }
      case Op::PoolT: {
        arity(1);
        if (!n.pooling || n.pooling->rows() != pshape(n, 0).rows) shape_fail(n, "pooling rows");
        if (n.begin == 0) shape_fail(n, "zero output rows");
        return {n.begin, pshape(n, 0).cols};
      }
      case Op::Bce: {
        arity(1);
        const Shape p = pshape(n, 0);
        if (p.cols != 1) shape_fail(n, "predictions must be a column, got " + p.str());
        if (!n.labels || n.labels->size() != p.rows) {
          shape_fail(n, "label count " + std::to_string(n.labels ? n.labels->size() : 0) +
                            " vs " + std::to_string(p.rows) + " predictions");
        }
        return {1, 1};
      }
    }
    shape_fail(n, "unknown op");
  }

  const Tensor& pval(const Node& n, std::size_t k) const { return nodes_[n.parents[k]].value; }

  static double at_broadcast(const Tensor& t, std::size_t r, std::size_t c) {
    if (t.rows() == 1 && t.cols() == 1) return t[0];
    if (t.rows() == 1) return t(0, c);
    return t(r, c);
  }

  Tensor compute(const Node& n) const {
    switch (n.op) {
      case Op::Input:
      case Op::Leaf:
        return n.value;
      case Op::MatMul: {
        const Tensor& a = pval(n, 0);
        const Tensor& b = pval(n, 1);
        Tensor out(a.rows(), b.cols());
        const std::size_t inner = a.cols(), cols = b.cols();
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double* o = out.data() + i * cols;
          for (std::size_t p = 0; p < inner; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            const double* br = b.data() + p * cols;
            for (std::size_t j = 0; j < cols; ++j) o[j] += av * br[j];
          }
        }
        return out;
      }
      case Op::Transpose: {
        const Tensor& a = pval(n, 0);
        Tensor out(a.cols(), a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
        return out;
      }
      case Op::Add:
      case Op::Mul: {
        const Tensor& a = pval(n, 0);
        const Tensor& b = pval(n, 1);
        Tensor out(a.shape());
        const bool add = n.op == Op::Add;
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < a.cols(); ++j) {
            const double bv = at_broadcast(b, i, j);
            out(i, j) = add ? a(i, j) + bv : a(i, j) * bv;
          }
        return out;
      }
      case Op::Scale: {
        Tensor out = pval(n, 0);
        for (double& v : out.values()) v = n.a * v + n.b;
        return out;
      }
      case Op::Concat: {
        Tensor out(n.shape);
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
          const Tensor& p = pval(n, k);
          for (std::size_t i = 0; i < p.rows(); ++i)
            std::copy_n(p.data() + i * p.cols(), p.cols(), out.data() + i * out.cols() + n.segments[k]);
        }
        return out;
      }
      case Op::Slice: {
        const Tensor& a = pval(n, 0);
        Tensor out(n.shape);
        for (std::size_t i = 0; i < a.rows(); ++i)
          std::copy_n(a.data() + i * a.cols() + n.begin, out.cols(), out.data() + i * out.cols());
        return out;
      }
      case Op::Relu: {
        Tensor out = pval(n, 0);
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        return out;
      }
      case Op::Sigmoid: {
        Tensor out = pval(n, 0);
        for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
        return out;
      }
      case Op::Mean:
      case Op::Sum: {
        const Tensor& a = pval(n, 0);
        double s = 0.0;
        for (double v : a.values()) s += v;
        if (n.op == Op::Mean) s /= static_cast<double>(a.size());
        return Tensor::scalar(s);
      }
      case Op::SumRows: {
        const Tensor& a = pval(n, 0);
        Tensor out(1, a.cols());
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
        return out;
      }
      case Op::Broadcast: {
        const Tensor& a = pval(n, 0);
        Tensor out(n.shape);
        for (std::size_t i = 0; i < out.rows(); ++i)
          for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = at_broadcast(a, i, j);
        return out;
      }
      case Op::Clamp: {
        Tensor out = pval(n, 0);
        for (double& v : out.values()) v = std::clamp(v, n.a, n.b);
        return out;
      }
      case Op::Reciprocal: {
        Tensor out = pval(n, 0);
        for (double& v : out.values()) v = 1.0 / v;
        return out;
      }
      case Op::Pool: {
        const Tensor& t = pval(n, 0);
        const Pooling& pool = *n.pooling;
        Tensor out(n.shape);
        for (std::size_t r = 0; r < pool.rows(); ++r) {
          double* o = out.data() + r * t.cols();
          for (std::size_t k = pool.offsets[r]; k < pool.offsets[r + 1]; ++k) {
            const double w = pool.weights[k];
            const double* src = t.data() + pool.indices[k] * t.cols();
            for (std::size_t j = 0; j < t.cols(); ++j) o[j] += w * src[j];
          }
        }
        return out;
      }
      case Op::PoolT: {
        const Tensor& g = pval(n, 0);
        const Pooling& pool = *n.pooling;
        Tensor out(n.shape);
        for (std::size_t r = 0; r < pool.rows(); ++r) {
          const double* src = g.data() + r * g.cols();
          for (std::size_t k = pool.offsets[r]; k < pool.offsets[r + 1]; ++k) {
            const double w = pool.weights[k];
            double* o = out.data() + pool.indices[k] * g.cols();
            for (std::size_t j = 0; j < g.cols(); ++j) o[j] += w * src[j];
          }
        }
        return out;
      }
      case Op::Bce:
        return Tensor::scalar(binary_cross_entropy(pval(n, 0).values(), *n.labels));
    }
    throw Error("unknown op");
  }

  // Sum `g` down to `shape` (inverse of broadcasting).
  Var reduce_to(Var g, Shape shape);

  // Contribution of node i's gradient `g` to its k-th parent.
  Var vjp(std::size_t i, std::size_t k, Var g);

  std::vector<Node> nodes_;
  bool record_grad_ = true;
};

inline const Tensor& Var::value() const { return graph_->node(id_).value; }
inline Shape Var::shape() const { return graph_->node(id_).shape; }
inline bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  if (!a || a.graph() != b.graph()) throw Error("operands belong to different graphs");
  return *a.graph();
}

inline Node unary(Op op, Var x) {
  Node n;
  n.op = op;
  n.parents = {x.id()};
  return n;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  Node n;
  n.op = Op::MatMul;
  n.parents = {a.id(), b.id()};
  return g.make(std::move(n));
}

inline Var transpose(Var x) { return x.graph()->make(detail::unary(Op::Transpose, x)); }

/// Elementwise a + b; b may be a 1 x cols row or a 1 x 1 scalar broadcast over a.
inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  Node n;
  n.op = Op::Add;
  n.parents = {a.id(), b.id()};
  return g.make(std::move(n));
}

/// Elementwise a * b with the same broadcasting rule as add.
inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  Node n;
  n.op = Op::Mul;
  n.parents = {a.id(), b.id()};
  return g.make(std::move(n));
}

/// factor * x + offset.
inline Var scale(Var x, double factor, double offset = 0.0) {
  Node n = detail::unary(Op::Scale, x);
  n.a = factor;
  n.b = offset;
  return x.graph()->make(std::move(n));
}

/// Column-wise concatenation; segment boundaries are recorded for the backward split.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Graph& g = *parts.front().graph();
  Node n;
  n.op = Op::Concat;
  n.segments.push_back(0);
  for (const Var& p : parts) {
    g.own(p);
    n.parents.push_back(p.id());
    n.segments.push_back(n.segments.back() + p.shape().cols);
  }
  return g.make(std::move(n));
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [begin, end).
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Node n = detail::unary(Op::Slice, x);
  n.begin = begin;
  n.end = end;
  return x.graph()->make(std::move(n));
}

inline Var relu(Var x) { return x.graph()->make(detail::unary(Op::Relu, x)); }
inline Var sigmoid(Var x) { return x.graph()->make(detail::unary(Op::Sigmoid, x)); }
inline Var mean(Var x) { return x.graph()->make(detail::unary(Op::Mean, x)); }
inline Var sum(Var x) { return x.graph()->make(detail::unary(Op::Sum, x)); }
inline Var sum_rows(Var x) { return x.graph()->make(detail::unary(Op::SumRows, x)); }
inline Var reciprocal(Var x) { return x.graph()->make(detail::unary(Op::Reciprocal, x)); }

inline Var broadcast(Var x, Shape shape) {
  Node n = detail::unary(Op::Broadcast, x);
  n.shape = shape;
  return x.graph()->make(std::move(n));
}

inline Var clamp(Var x, double lo, double hi) {
  Node n = detail::unary(Op::Clamp, x);
  n.a = lo;
  n.b = hi;
  return x.graph()->make(std::move(n));
}

/// Rows of `table` combined per `pooling`.
inline Var pool(Var table, std::shared_ptr<const Pooling> pooling) {
  Node n = detail::unary(Op::Pool, table);
  n.pooling = std::move(pooling);
  return table.graph()->make(std::move(n));
}

/// Adjoint of pool: scatters rows of `g` back into a table of `rows` rows.
inline Var pool_t(Var g, std::shared_ptr<const Pooling> pooling, std::size_t rows) {
  Node n = detail::unary(Op::PoolT, g);
  n.pooling = std::move(pooling);
  n.begin = rows;
  return g.graph()->make(std::move(n));
}

/// Mean binary cross-entropy of an N x 1 prediction column against fixed labels.
inline Var bce(Var predictions, std::vector<double> labels) {
  Node n = detail::unary(Op::Bce, predictions);
  n.labels = std::make_shared<const std::vector<double>>(std::move(labels));
  return predictions.graph()->make(std::move(n));
}

inline Var Graph::reduce_to(Var g, Shape shape) {
  const Shape gs = g.shape();
  if (gs == shape) return g;
  if (shape.rows == 1 && shape.cols == 1) return sum(g);
  if (shape.rows == 1 && shape.cols == gs.cols) return sum_rows(g);
  throw ShapeError("cannot reduce gradient " + gs.str() + " to " + shape.str());
}

inline Var Graph::vjp(std::size_t i, std::size_t k, Var g) {
  // Copy what we need: creating nodes may reallocate nodes_.
  const Op op = nodes_[i].op;
  const std::vector<std::size_t> parents = nodes_[i].parents;
  const Var self(this, i);
  const Var x(this, parents[k]);
  const Shape xs = nodes_[parents[k]].shape;

  switch (op) {
    case Op::MatMul: {
      const Var a(this, parents[0]), b(this, parents[1]);
      return k == 0 ? matmul(g, transpose(b)) : matmul(transpose(a), g);
    }
    case Op::Transpose:
      return transpose(g);
    case Op::Add:
      return k == 0 ? g : reduce_to(g, xs);
    case Op::Mul: {
      const Var a(this, parents[0]), b(this, parents[1]);
      return k == 0 ? mul(g, b) : reduce_to(mul(g, a), xs);
    }
    case Op::Scale:
      return scale(g, nodes_[i].a);
    case Op::Concat: {
      const std::size_t lo = nodes_[i].segments[k], hi = nodes_[i].segments[k + 1];
      return slice_cols(g, lo, hi);
    }
    case Op::Slice: {
      const std::size_t lo = nodes_[i].begin, hi = nodes_[i].end;
      std::vector<Var> parts;
      if (lo > 0) parts.push_back(constant(Tensor(xs.rows, lo)));
      parts.push_back(g);
      if (hi < xs.cols) parts.push_back(constant(Tensor(xs.rows, xs.cols - hi)));
      return parts.size() == 1 ? g : concat(parts);
    }
    case Op::Relu: {
      Tensor mask(xs);
      const Tensor& xv = nodes_[parents[0]].value;
      for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = xv[j] > 0.0 ? 1.0 : 0.0;
      return mul(g, constant(std::move(mask)));
    }
    case Op::Sigmoid:
      return mul(g, mul(self, scale(self, -1.0, 1.0)));
    case Op::Mean:
      return broadcast(scale(g, 1.0 / static_cast<double>(xs.size())), xs);
    case Op::Sum:
    case Op::SumRows:
      return broadcast(g, xs);
    case Op::Broadcast:
      return reduce_to(g, xs);
    case Op::Clamp: {
      Tensor mask(xs);
      const Tensor& xv = nodes_[parents[0]].value;
      const double lo = nodes_[i].a, hi = nodes_[i].b;
      for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = (xv[j] >= lo && xv[j] <= hi) ? 1.0 : 0.0;
      return mul(g, constant(std::move(mask)));
    }
    case Op::Reciprocal:
      return mul(g, scale(mul(self, self), -1.0));
    case Op::Pool:
      return pool_t(g, nodes_[i].pooling, xs.rows);
    case Op::PoolT:
      return pool(g, nodes_[i].pooling);
    case Op::Bce: {
      // d/dp = (-(y / p) + (1 - y) / (1 - p)) / N on the unclamped region.
      const std::vector<double>& y = *nodes_[i].labels;
      const double count = static_cast<double>(y.size());
      Tensor neg_pos(xs), pos_neg(xs), mask(xs);
      const Tensor& pv = nodes_[parents[0]].value;
      for (std::size_t j = 0; j < y.size(); ++j) {
        neg_pos[j] = -y[j] / count;
        pos_neg[j] = (1.0 - y[j]) / count;
        mask[j] = (pv[j] >= kProbClamp && pv[j] <= 1.0 - kProbClamp) ? 1.0 : 0.0;
      }
      const Var pc = clamp(x, kProbClamp, 1.0 - kProbClamp);
      const Var coef = add(mul(reciprocal(pc), constant(std::move(neg_pos))),
                           mul(reciprocal(scale(pc, -1.0, 1.0)), constant(std::move(pos_neg))));
      return mul(mul(coef, constant(std::move(mask))), g);
    }
    case Op::Input:
    case Op::Leaf:
      break;
  }
  throw Error("no gradient rule for " + std::string(op_name(op)));
}

}  // namespace cometa::ad
