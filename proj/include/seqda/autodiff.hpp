#pragma once

// Reverse-mode differentiation over rank-2 tensors.
//
// A Graph is a tape: every op evaluates eagerly and appends a node whose
// inputs are earlier nodes, so node order is a topological order. backward()
// walks the tape in reverse once. A Graph is single-threaded; build one graph
// per sample (or per triplet) and run independent graphs on worker threads.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqda/tensor.hpp"

namespace seqda::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.values.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}
inline MatrixMap as_matrix(Tensor& t) {
  return MatrixMap(t.values.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

enum class Op {
  Input, Constant, Parameter,
  Add, Sub, Mul, Neg, Scale, AddScalar, ScaleBy, AddRow,
  Square, Pow, Sqrt, Exp, Log, Tanh, Sigmoid, Relu, ClampMin,
  MatMul, Transpose, Affine,
  Sum, Mean, MeanRows, Center,
  Softmax, LogSoftmax,
  ConcatCols, ConcatRows, SliceCols, SliceRows, GatherCols, Gather, ReverseRows,
  Conv1d, MaxPoolTime, LstmCell,
  PairwiseSqDist, Inverse, LogDet, Trace, AddIdentity,
  Custom,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::ScaleBy: return "scale_by";
    case Op::AddRow: return "add_row";
    case Op::Square: return "square";
    case Op::Pow: return "pow";
    case Op::Sqrt: return "sqrt";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::ClampMin: return "clamp_min";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Affine: return "affine";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::MeanRows: return "mean_rows";
    case Op::Center: return "center";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::GatherCols: return "gather_cols";
    case Op::Gather: return "gather";
    case Op::ReverseRows: return "reverse_rows";
    case Op::Conv1d: return "conv1d";
    case Op::MaxPoolTime: return "max_pool_time";
    case Op::LstmCell: return "lstm_cell";
    case Op::PairwiseSqDist: return "pairwise_sqdist";
    case Op::Inverse: return "inverse";
    case Op::LogDet: return "logdet";
    case Op::Trace: return "trace";
    case Op::AddIdentity: return "add_identity";
    case Op::Custom: return "custom";
  }
  return "?";
}

/// Raised when an op receives operands of incompatible shape. Carries the id
/// the offending node would have received.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::size_t node, const std::string& what)
      : std::invalid_argument("node " + std::to_string(node) + ": " + what), node_(node) {}
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Graph {
 public:
  /// Reads the adjoint of `node` and accumulates into its inputs' adjoints.
  using BackwardFn = std::function<void(Graph&, std::size_t node)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(std::string name, Tensor value) { return leaf(Op::Input, std::move(name), std::move(value), true); }
  Var constant(Tensor value) { return leaf(Op::Constant, {}, std::move(value), false); }
  Var parameter(std::string name, Tensor value) {
    return leaf(Op::Parameter, std::move(name), std::move(value), true);
  }

  /// Appends a node. Public so other modules can contribute ops (e.g. CTC).
  Var record(Op op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), needs ? std::move(backward) : BackwardFn{},
                          {}, needs});
    return Var{this, nodes_.size() - 1};
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t next_id() const { return nodes_.size(); }
  Op op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Reverse sweep seeded with d(objective)/d(objective) = 1.
  void backward(Var objective) {
    check_owned(objective);
    if (!value(objective.id).is_scalar())
      throw std::invalid_argument("objective node " + std::to_string(objective.id) + " is not scalar, shape " +
                                  shape_string(value(objective.id).shape));
    adjoints_.assign(nodes_.size(), Tensor{});
    has_adjoint_.assign(nodes_.size(), 0);
    if (!nodes_[objective.id].requires_grad) return;
    accumulate(objective.id, Tensor::scalar(1.0));
    for (std::size_t i = objective.id + 1; i-- > 0;) {
      if (!has_adjoint_[i] || !nodes_[i].backward) continue;
      nodes_[i].backward(*this, i);
    }
  }

  /// Adjoint after backward(); zeros when the node did not influence the objective.
  Tensor adjoint(Var v) const {
    if (v.id < has_adjoint_.size() && has_adjoint_[v.id]) return adjoints_[v.id];
    return Tensor(value(v.id).shape, 0.0);
  }

  const Tensor& adjoint_ref(std::size_t id) const { return adjoints_[id]; }

  /// Gradients of `objective` with respect to the named inputs/parameters.
  std::map<std::string, Tensor> grad(Var objective, const std::vector<std::string>& wrt) {
    backward(objective);
    std::map<std::string, Tensor> out;
    for (const auto& name : wrt) {
      auto it = named_.find(name);
      if (it == named_.end()) throw std::invalid_argument("no parameter or input named '" + name + "'");
      out.emplace(name, adjoint(Var{this, it->second}));
    }
    return out;
  }

  Var find(const std::string& name) {
    auto it = named_.find(name);
    if (it == named_.end()) throw std::invalid_argument("no parameter or input named '" + name + "'");
    return Var{this, it->second};
  }

  /// Adds `g` into the adjoint of `id` (no-op for nodes that need no gradient).
  void accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    if (!has_adjoint_[id]) {
      adjoints_[id] = g;
      has_adjoint_[id] = 1;
      return;
    }
    auto& dst = adjoints_[id].values;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.values[i];
  }

  /// Mutable adjoint buffer of `id`, zero-initialized on first touch.
  Tensor& adjoint_buffer(std::size_t id) {
    if (!has_adjoint_[id]) {
      adjoints_[id] = Tensor(value(id).shape, 0.0);
      has_adjoint_[id] = 1;
    }
    return adjoints_[id];
  }

  void check_owned(Var v) const {
    if (v.graph != this || v.id >= nodes_.size()) throw std::invalid_argument("variable does not belong to this graph");
  }

 private:
  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    std::string name;
    bool requires_grad;
  };

  Var leaf(Op op, std::string name, Tensor value, bool needs) {
    if (!name.empty()) {
      if (named_.count(name)) throw std::invalid_argument("duplicate node name '" + name + "'");
      named_.emplace(name, nodes_.size());
    }
    nodes_.push_back(Node{op, {}, std::move(value), {}, std::move(name), needs});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  std::vector<char> has_adjoint_;
  std::map<std::string, std::size_t> named_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

inline Graph& graph_of(std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.graph) throw std::invalid_argument("null variable");
    if (g && v.graph != g) throw std::invalid_argument("variables from different graphs");
    g = v.graph;
  }
  return *g;
}

inline void require_matrix(const Graph& g, Var v, const char* what) {
  if (!v.value().is_matrix())
    throw ShapeError(g.next_id(), std::string(what) + ": operand must be rank 2, got " + shape_string(v.value().shape));
}

inline void require_same(const Graph& g, Var a, Var b, const char* what) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(g.next_id(), std::string(what) + ": shape mismatch " + shape_string(a.value().shape) + " vs " +
                                      shape_string(b.value().shape));
}

inline void require_scalar(const Graph& g, Var v, const char* what) {
  if (!v.value().is_scalar())
    throw ShapeError(g.next_id(), std::string(what) + ": expected scalar, got " + shape_string(v.value().shape));
}

/// Elementwise op y = f(x) with dy/dx = df(x, y).
template <class F, class DF>
Var unary(Op op, Var x, F f, DF df) {
  Graph& g = *x.graph;
  Tensor y(x.value().shape);
  const auto& xv = x.value().values;
  for (std::size_t i = 0; i < xv.size(); ++i) y.values[i] = f(xv[i]);
  const std::size_t xi = x.id;
  return g.record(op, {xi}, std::move(y), [xi, df](Graph& gr, std::size_t self) {
    const auto& gy = gr.adjoint_ref(self).values;
    const auto& xv = gr.value(xi).values;
    const auto& yv = gr.value(self).values;
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx.values[i] += gy[i] * df(xv[i], yv[i]);
  });
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  detail::require_same(g, a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] += b.value().values[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(Op::Add, {ai, bi}, std::move(y), [ai, bi](Graph& gr, std::size_t self) {
    gr.accumulate(ai, gr.adjoint_ref(self));
    gr.accumulate(bi, gr.adjoint_ref(self));
  });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  detail::require_same(g, a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] -= b.value().values[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(Op::Sub, {ai, bi}, std::move(y), [ai, bi](Graph& gr, std::size_t self) {
    gr.accumulate(ai, gr.adjoint_ref(self));
    if (gr.needs_grad(bi)) {
      Tensor& gb = gr.adjoint_buffer(bi);
      const auto& gy = gr.adjoint_ref(self).values;
      for (std::size_t i = 0; i < gy.size(); ++i) gb.values[i] -= gy[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  detail::require_same(g, a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] *= b.value().values[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(Op::Mul, {ai, bi}, std::move(y), [ai, bi](Graph& gr, std::size_t self) {
    const auto& gy = gr.adjoint_ref(self).values;
    if (gr.needs_grad(ai)) {
      Tensor& ga = gr.adjoint_buffer(ai);
      const auto& bv = gr.value(bi).values;
      for (std::size_t i = 0; i < gy.size(); ++i) ga.values[i] += gy[i] * bv[i];
    }
    if (gr.needs_grad(bi)) {
      Tensor& gb = gr.adjoint_buffer(bi);
      const auto& av = gr.value(ai).values;
      for (std::size_t i = 0; i < gy.size(); ++i) gb.values[i] += gy[i] * av[i];
    }
  });
}

inline Var neg(Var x) {
  return detail::unary(Op::Neg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Var scale(Var x, double c) {
  return detail::unary(Op::Scale, x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(Op::AddScalar, x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var square(Var x) {
  return detail::unary(Op::Square, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Elementwise real power.
inline Var pow(Var x, double e) {
  if (e == 2.0) return square(x);
  return detail::unary(
      Op::Pow, x, [e](double v) { return e == 3.0 ? v * v * v : std::pow(v, e); },
      [e](double v, double) { return e == 3.0 ? 3.0 * v * v : e * std::pow(v, e - 1.0); });
}

/// Square root; the derivative at 0 is taken as 0.
inline Var sqrt(Var x) {
  return detail::unary(
      Op::Sqrt, x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Var exp(Var x) {
  return detail::unary(Op::Exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  return detail::unary(Op::Log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var tanh(Var x) {
  return detail::unary(Op::Tanh, x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
  return detail::unary(Op::Sigmoid, x, [](double v) { return detail::sigmoid(v); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var x) {
  // NaN passes through so divergence stays visible
  return detail::unary(Op::Relu, x, [](double v) { return v < 0.0 ? 0.0 : v; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// max(x, floor) elementwise; gradient flows only where x > floor.
inline Var clamp_min(Var x, double floor) {
  return detail::unary(Op::ClampMin, x, [floor](double v) { return v < floor ? floor : v; },
                       [floor](double v, double) { return v > floor ? 1.0 : 0.0; });
}

/// x * s for a scalar node s.
inline Var scale_by(Var x, Var s) {
  Graph& g = detail::graph_of({x, s});
  detail::require_scalar(g, s, "scale_by");
  const double sv = s.value().item();
  Tensor y = x.value();
  for (double& v : y.values) v *= sv;
  const std::size_t xi = x.id, si = s.id;
  return g.record(Op::ScaleBy, {xi, si}, std::move(y), [xi, si](Graph& gr, std::size_t self) {
    const auto& gy = gr.adjoint_ref(self).values;
    const double sv = gr.value(si).item();
    if (gr.needs_grad(xi)) {
      Tensor& gx = gr.adjoint_buffer(xi);
      for (std::size_t i = 0; i < gy.size(); ++i) gx.values[i] += gy[i] * sv;
    }
    if (gr.needs_grad(si)) {
      const auto& xv = gr.value(xi).values;
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
      gr.adjoint_buffer(si).values[0] += acc;
    }
  });
}

/// X + b with b a 1 x cols row broadcast over rows.
inline Var add_row(Var x, Var b) {
  Graph& g = detail::graph_of({x, b});
  detail::require_matrix(g, x, "add_row");
  if (b.value().rows() != 1 || b.value().cols() != x.value().cols())
    throw ShapeError(g.next_id(), "add_row: bias " + shape_string(b.value().shape) + " vs input " +
                                      shape_string(x.value().shape));
  Tensor y = x.value();
  const std::size_t r = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y(i, j) += b.value().values[j];
  const std::size_t xi = x.id, bi = b.id;
  return g.record(Op::AddRow, {xi, bi}, std::move(y), [xi, bi](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    gr.accumulate(xi, gy);
    if (gr.needs_grad(bi)) {
      Tensor& gb = gr.adjoint_buffer(bi);
      for (std::size_t i = 0; i < gy.rows(); ++i)
        for (std::size_t j = 0; j < gy.cols(); ++j) gb.values[j] += gy(i, j);
    }
  });
}

// ---- linear algebra --------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  detail::require_matrix(g, a, "matmul");
  detail::require_matrix(g, b, "matmul");
  if (a.value().cols() != b.value().rows())
    throw ShapeError(g.next_id(), "matmul: inner dimensions " + shape_string(a.value().shape) + " x " +
                                      shape_string(b.value().shape));
  Tensor y = Tensor::matrix(a.value().rows(), b.value().cols());
  as_matrix(y).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  const std::size_t ai = a.id, bi = b.id;
  return g.record(Op::MatMul, {ai, bi}, std::move(y), [ai, bi](Graph& gr, std::size_t self) {
    const auto gy = as_matrix(gr.adjoint_ref(self));
    if (gr.needs_grad(ai)) as_matrix(gr.adjoint_buffer(ai)).noalias() += gy * as_matrix(gr.value(bi)).transpose();
    if (gr.needs_grad(bi)) as_matrix(gr.adjoint_buffer(bi)).noalias() += as_matrix(gr.value(ai)).transpose() * gy;
  });
}

inline Var transpose(Var a) {
  Graph& g = *a.graph;
  detail::require_matrix(g, a, "transpose");
  Tensor y = Tensor::matrix(a.value().cols(), a.value().rows());
  as_matrix(y) = as_matrix(a.value()).transpose();
  const std::size_t ai = a.id;
  return g.record(Op::Transpose, {ai}, std::move(y), [ai](Graph& gr, std::size_t self) {
    as_matrix(gr.adjoint_buffer(ai)) += as_matrix(gr.adjoint_ref(self)).transpose();
  });
}

/// X W + b, b broadcast over rows.
inline Var affine(Var x, Var w, Var b) {
  Graph& g = detail::graph_of({x, w, b});
  detail::require_matrix(g, x, "affine");
  detail::require_matrix(g, w, "affine");
  if (x.value().cols() != w.value().rows() || b.value().rows() != 1 || b.value().cols() != w.value().cols())
    throw ShapeError(g.next_id(), "affine: x " + shape_string(x.value().shape) + ", W " +
                                      shape_string(w.value().shape) + ", b " + shape_string(b.value().shape));
  Tensor y = Tensor::matrix(x.value().rows(), w.value().cols());
  as_matrix(y).noalias() = as_matrix(x.value()) * as_matrix(w.value());
  as_matrix(y).rowwise() += as_matrix(b.value()).row(0);
  const std::size_t xi = x.id, wi = w.id, bi = b.id;
  return g.record(Op::Affine, {xi, wi, bi}, std::move(y), [xi, wi, bi](Graph& gr, std::size_t self) {
    const auto gy = as_matrix(gr.adjoint_ref(self));
    if (gr.needs_grad(xi)) as_matrix(gr.adjoint_buffer(xi)).noalias() += gy * as_matrix(gr.value(wi)).transpose();
    if (gr.needs_grad(wi)) as_matrix(gr.adjoint_buffer(wi)).noalias() += as_matrix(gr.value(xi)).transpose() * gy;
    if (gr.needs_grad(bi)) as_matrix(gr.adjoint_buffer(bi)).row(0) += gy.colwise().sum();
  });
}

inline Var trace(Var a) {
  Graph& g = *a.graph;
  detail::require_matrix(g, a, "trace");
  if (a.value().rows() != a.value().cols()) throw ShapeError(g.next_id(), "trace: matrix not square");
  const std::size_t n = a.value().rows();
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) t += a.value()(i, i);
  const std::size_t ai = a.id;
  return g.record(Op::Trace, {ai}, Tensor::scalar(t), [ai, n](Graph& gr, std::size_t self) {
    const double gy = gr.adjoint_ref(self).item();
    Tensor& ga = gr.adjoint_buffer(ai);
    for (std::size_t i = 0; i < n; ++i) ga(i, i) += gy;
  });
}

/// A + s I for a scalar node s.
inline Var add_identity(Var a, Var s) {
  Graph& g = detail::graph_of({a, s});
  detail::require_matrix(g, a, "add_identity");
  detail::require_scalar(g, s, "add_identity");
  if (a.value().rows() != a.value().cols()) throw ShapeError(g.next_id(), "add_identity: matrix not square");
  Tensor y = a.value();
  const std::size_t n = y.rows();
  for (std::size_t i = 0; i < n; ++i) y(i, i) += s.value().item();
  const std::size_t ai = a.id, si = s.id;
  return g.record(Op::AddIdentity, {ai, si}, std::move(y), [ai, si, n](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    gr.accumulate(ai, gy);
    if (gr.needs_grad(si)) {
      double t = 0.0;
      for (std::size_t i = 0; i < n; ++i) t += gy(i, i);
      gr.adjoint_buffer(si).values[0] += t;
    }
  });
}

inline Var inverse(Var a) {
  Graph& g = *a.graph;
  detail::require_matrix(g, a, "inverse");
  if (a.value().rows() != a.value().cols()) throw ShapeError(g.next_id(), "inverse: matrix not square");
  Tensor y = Tensor::matrix(a.value().rows(), a.value().cols());
  as_matrix(y) = as_matrix(a.value()).partialPivLu().inverse();
  if (!y.all_finite()) throw std::domain_error("inverse: matrix is singular");
  const std::size_t ai = a.id;
  return g.record(Op::Inverse, {ai}, std::move(y), [ai](Graph& gr, std::size_t self) {
    const auto inv = as_matrix(gr.value(self));
    as_matrix(gr.adjoint_buffer(ai)).noalias() -= inv.transpose() * as_matrix(gr.adjoint_ref(self)) * inv.transpose();
  });
}

/// log det A for a matrix with positive determinant, summed over LU pivots.
inline Var logdet(Var a) {
  Graph& g = *a.graph;
  detail::require_matrix(g, a, "logdet");
  if (a.value().rows() != a.value().cols()) throw ShapeError(g.next_id(), "logdet: matrix not square");
  Eigen::PartialPivLU<RowMatrix> lu(as_matrix(a.value()));
  const auto& u = lu.matrixLU();
  double ld = 0.0;
  int sign = lu.permutationP().determinant();
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double d = u(i, i);
    if (d == 0.0) throw std::domain_error("logdet: matrix is singular");
    if (d < 0.0) sign = -sign;
    ld += std::log(std::abs(d));
  }
  if (sign < 0) throw std::domain_error("logdet: determinant is not positive");
  if (!std::isfinite(ld)) throw std::domain_error("logdet: non-finite log-determinant");
  const std::size_t ai = a.id;
  return g.record(Op::LogDet, {ai}, Tensor::scalar(ld), [ai](Graph& gr, std::size_t self) {
    const double gy = gr.adjoint_ref(self).item();
    RowMatrix inv = as_matrix(gr.value(ai)).partialPivLu().inverse();
    as_matrix(gr.adjoint_buffer(ai)) += gy * inv.transpose();
  });
}

/// D[i][j] = ||a_i - b_j||^2 over rows of A (n x H) and B (m x H).
inline Var pairwise_sqdist(Var a, Var b) {
  Graph& g = detail::graph_of({a, b});
  detail::require_matrix(g, a, "pairwise_sqdist");
  detail::require_matrix(g, b, "pairwise_sqdist");
  if (a.value().cols() != b.value().cols())
    throw ShapeError(g.next_id(), "pairwise_sqdist: feature dims " + shape_string(a.value().shape) + " vs " +
                                      shape_string(b.value().shape));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows(), m = bv.rows(), h = av.cols();
  Tensor y = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double* x = av.row_ptr(i);
      const double* z = bv.row_ptr(j);
      double s = 0.0;
      for (std::size_t k = 0; k < h; ++k) {
        const double d = x[k] - z[k];
        s += d * d;
      }
      y(i, j) = s;
    }
  const std::size_t ai = a.id, bi = b.id;
  return g.record(Op::PairwiseSqDist, {ai, bi}, std::move(y), [ai, bi, n, m, h](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    const Tensor& av = gr.value(ai);
    const Tensor& bv = gr.value(bi);
    const bool ga_on = gr.needs_grad(ai), gb_on = gr.needs_grad(bi);
    Tensor* ga = ga_on ? &gr.adjoint_buffer(ai) : nullptr;
    Tensor* gb = gb_on ? &gr.adjoint_buffer(bi) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double w = 2.0 * gy(i, j);
        if (w == 0.0) continue;
        for (std::size_t k = 0; k < h; ++k) {
          const double d = w * (av(i, k) - bv(j, k));
          if (ga) (*ga)(i, k) += d;
          if (gb) (*gb)(j, k) -= d;
        }
      }
  });
}

// ---- reductions ------------------------------------------------------------

inline Var sum(Var x) {
  Graph& g = *x.graph;
  double s = 0.0;
  for (double v : x.value().values) s += v;
  const std::size_t xi = x.id;
  return g.record(Op::Sum, {xi}, Tensor::scalar(s), [xi](Graph& gr, std::size_t self) {
    const double gy = gr.adjoint_ref(self).item();
    for (double& v : gr.adjoint_buffer(xi).values) v += gy;
  });
}

inline Var mean(Var x) {
  Graph& g = *x.graph;
  const std::size_t n = x.value().size();
  double s = 0.0;
  for (double v : x.value().values) s += v;
  const std::size_t xi = x.id;
  return g.record(Op::Mean, {xi}, Tensor::scalar(s / static_cast<double>(n)), [xi, n](Graph& gr, std::size_t self) {
    const double gy = gr.adjoint_ref(self).item() / static_cast<double>(n);
    for (double& v : gr.adjoint_buffer(xi).values) v += gy;
  });
}

/// Column means over rows: (n x H) -> (1 x H).
inline Var mean_rows(Var x) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "mean_rows");
  const std::size_t n = x.value().rows(), h = x.value().cols();
  Tensor y = Tensor::matrix(1, h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h; ++j) y.values[j] += x.value()(i, j);
  for (double& v : y.values) v /= static_cast<double>(n);
  const std::size_t xi = x.id;
  return g.record(Op::MeanRows, {xi}, std::move(y), [xi, n, h](Graph& gr, std::size_t self) {
    const auto& gy = gr.adjoint_ref(self).values;
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < h; ++j) gx(i, j) += gy[j] / static_cast<double>(n);
  });
}

/// Mean-centering along `axis`: 0 subtracts column means, 1 subtracts row means.
inline Var center(Var x, int axis = 0) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "center");
  if (axis != 0 && axis != 1) throw ShapeError(g.next_id(), "center: axis must be 0 or 1");
  const std::size_t r = x.value().rows(), c = x.value().cols();
  auto centered = [axis, r, c](const Tensor& in) {
    Tensor out = in;
    if (axis == 0) {
      for (std::size_t j = 0; j < c; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < r; ++i) m += in(i, j);
        m /= static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i) out(i, j) -= m;
      }
    } else {
      for (std::size_t i = 0; i < r; ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j < c; ++j) m += in(i, j);
        m /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) out(i, j) -= m;
      }
    }
    return out;
  };
  const std::size_t xi = x.id;
  // Centering is a symmetric projection, so the adjoint is the centered upstream gradient.
  return g.record(Op::Center, {xi}, centered(x.value()), [xi, centered](Graph& gr, std::size_t self) {
    gr.accumulate(xi, centered(gr.adjoint_ref(self)));
  });
}

/// Softmax over the feature (column) axis of each row.
inline Var softmax(Var x) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "softmax");
  Tensor y = x.value();
  const std::size_t r = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double* row = y.row_ptr(i);
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= s;
  }
  const std::size_t xi = x.id;
  return g.record(Op::Softmax, {xi}, std::move(y), [xi, r, c](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    const Tensor& yv = gr.value(self);
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gy(i, j) * yv(i, j);
      for (std::size_t j = 0; j < c; ++j) gx(i, j) += yv(i, j) * (gy(i, j) - dot);
    }
  });
}

/// Log-softmax over the feature axis of each row.
inline Var log_softmax(Var x) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "log_softmax");
  Tensor y = x.value();
  const std::size_t r = y.rows(), c = y.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double* row = y.row_ptr(i);
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  const std::size_t xi = x.id;
  return g.record(Op::LogSoftmax, {xi}, std::move(y), [xi, r, c](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    const Tensor& yv = gr.value(self);
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += gy(i, j);
      for (std::size_t j = 0; j < c; ++j) gx(i, j) += gy(i, j) - std::exp(yv(i, j)) * s;
    }
  });
}

// ---- structural ------------------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  Graph& g = *parts.front().graph;
  const std::size_t r = parts.front().value().rows();
  std::size_t c = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    detail::require_matrix(g, p, "concat_cols");
    if (p.graph != &g) throw std::invalid_argument("concat_cols: variables from different graphs");
    if (p.value().rows() != r)
      throw ShapeError(g.next_id(), "concat_cols: row count " + std::to_string(p.value().rows()) + " vs " +
                                        std::to_string(r));
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    c += p.value().cols();
  }
  Tensor y = Tensor::matrix(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < r; ++i) std::copy(v.row_ptr(i), v.row_ptr(i) + v.cols(), y.row_ptr(i) + off);
    off += v.cols();
  }
  return g.record(Op::ConcatCols, ids, std::move(y), [ids, widths, r](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.needs_grad(ids[k])) {
        Tensor& gx = gr.adjoint_buffer(ids[k]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gx(i, j) += gy(i, off + j);
      }
      off += widths[k];
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  Graph& g = *parts.front().graph;
  const std::size_t c = parts.front().value().cols();
  std::vector<std::size_t> ids, heights;
  std::vector<double> data;
  for (const Var& p : parts) {
    detail::require_matrix(g, p, "concat_rows");
    if (p.graph != &g) throw std::invalid_argument("concat_rows: variables from different graphs");
    if (p.value().cols() != c)
      throw ShapeError(g.next_id(), "concat_rows: column count " + std::to_string(p.value().cols()) + " vs " +
                                        std::to_string(c));
    ids.push_back(p.id);
    heights.push_back(p.value().rows());
    data.insert(data.end(), p.value().values.begin(), p.value().values.end());
  }
  const std::size_t r = data.size() / c;
  return g.record(Op::ConcatRows, ids, Tensor::matrix(r, c, std::move(data)),
                  [ids, heights, c](Graph& gr, std::size_t self) {
                    const Tensor& gy = gr.adjoint_ref(self);
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      const std::size_t n = heights[k] * c;
                      if (gr.needs_grad(ids[k])) {
                        Tensor& gx = gr.adjoint_buffer(ids[k]);
                        for (std::size_t i = 0; i < n; ++i) gx.values[i] += gy.values[off + i];
                      }
                      off += n;
                    }
                  });
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "slice_cols");
  if (begin >= end || end > x.value().cols())
    throw ShapeError(g.next_id(), "slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                      ") out of " + std::to_string(x.value().cols()));
  const std::size_t r = x.value().rows(), w = end - begin;
  Tensor y = Tensor::matrix(r, w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy(x.value().row_ptr(i) + begin, x.value().row_ptr(i) + end, y.row_ptr(i));
  const std::size_t xi = x.id;
  return g.record(Op::SliceCols, {xi}, std::move(y), [xi, r, w, begin](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx(i, begin + j) += gy(i, j);
  });
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "slice_rows");
  if (begin >= end || end > x.value().rows())
    throw ShapeError(g.next_id(), "slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                      ") out of " + std::to_string(x.value().rows()));
  const std::size_t c = x.value().cols();
  std::vector<double> data(x.value().values.begin() + static_cast<std::ptrdiff_t>(begin * c),
                           x.value().values.begin() + static_cast<std::ptrdiff_t>(end * c));
  const std::size_t xi = x.id;
  return g.record(Op::SliceRows, {xi}, Tensor::matrix(end - begin, c, std::move(data)),
                  [xi, begin, c](Graph& gr, std::size_t self) {
                    const auto& gy = gr.adjoint_ref(self).values;
                    Tensor& gx = gr.adjoint_buffer(xi);
                    for (std::size_t i = 0; i < gy.size(); ++i) gx.values[begin * c + i] += gy[i];
                  });
}

/// Columns of X picked by index (repeats allowed): (n x H) -> (n x idx.size()).
inline Var gather_cols(Var x, std::vector<std::size_t> idx) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "gather_cols");
  const std::size_t r = x.value().rows(), h = x.value().cols(), k = idx.size();
  if (k == 0) throw ShapeError(g.next_id(), "gather_cols: empty index list");
  for (std::size_t j : idx)
    if (j >= h) throw ShapeError(g.next_id(), "gather_cols: column " + std::to_string(j) + " out of " + std::to_string(h));
  Tensor y = Tensor::matrix(r, k);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < k; ++j) y(i, j) = x.value()(i, idx[j]);
  const std::size_t xi = x.id;
  return g.record(Op::GatherCols, {xi}, std::move(y), [xi, r, idx = std::move(idx)](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) gx(i, idx[j]) += gy(i, j);
  });
}

/// Flat (row-major) element gather: -> (1 x idx.size()).
inline Var gather(Var x, std::vector<std::size_t> idx) {
  Graph& g = *x.graph;
  if (idx.empty()) throw ShapeError(g.next_id(), "gather: empty index list");
  std::vector<double> data;
  data.reserve(idx.size());
  for (std::size_t j : idx) {
    if (j >= x.value().size()) throw ShapeError(g.next_id(), "gather: index " + std::to_string(j) + " out of range");
    data.push_back(x.value().values[j]);
  }
  const std::size_t xi = x.id;
  return g.record(Op::Gather, {xi}, Tensor::row(std::move(data)), [xi, idx = std::move(idx)](Graph& gr, std::size_t self) {
    const auto& gy = gr.adjoint_ref(self).values;
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t j = 0; j < idx.size(); ++j) gx.values[idx[j]] += gy[j];
  });
}

/// Reverses the time (row) axis.
inline Var reverse_rows(Var x) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "reverse_rows");
  const std::size_t r = x.value().rows(), c = x.value().cols();
  Tensor y = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) std::copy(x.value().row_ptr(r - 1 - i), x.value().row_ptr(r - 1 - i) + c, y.row_ptr(i));
  const std::size_t xi = x.id;
  return g.record(Op::ReverseRows, {xi}, std::move(y), [xi, r, c](Graph& gr, std::size_t self) {
    const Tensor& gy = gr.adjoint_ref(self);
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx(r - 1 - i, j) += gy(i, j);
  });
}

// ---- sequence layers -------------------------------------------------------

/// 1-D convolution over time with "same" zero padding.
/// x: (T x Cin); w: (kernel*Cin x Cout), row index k*Cin + ci; b: (1 x Cout).
/// Output has ceil(T / stride) rows.
inline Var conv1d(Var x, Var w, Var b, std::size_t kernel, std::size_t stride = 1) {
  Graph& g = detail::graph_of({x, w, b});
  detail::require_matrix(g, x, "conv1d");
  detail::require_matrix(g, w, "conv1d");
  const std::size_t t_in = x.value().rows(), cin = x.value().cols(), cout = w.value().cols();
  if (kernel == 0 || stride == 0) throw ShapeError(g.next_id(), "conv1d: kernel and stride must be positive");
  if (w.value().rows() != kernel * cin || b.value().rows() != 1 || b.value().cols() != cout)
    throw ShapeError(g.next_id(), "conv1d: x " + shape_string(x.value().shape) + ", W " +
                                      shape_string(w.value().shape) + ", b " + shape_string(b.value().shape) +
                                      ", kernel " + std::to_string(kernel));
  const std::size_t t_out = (t_in + stride - 1) / stride;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  auto im2col = [=](const Tensor& in) {
    RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(t_out), static_cast<Eigen::Index>(kernel * cin));
    for (std::size_t t = 0; t < t_out; ++t)
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(t_in)) continue;
        const double* src = in.row_ptr(static_cast<std::size_t>(p));
        for (std::size_t c = 0; c < cin; ++c)
          col(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k * cin + c)) = src[c];
      }
    return col;
  };
  Tensor y = Tensor::matrix(t_out, cout);
  as_matrix(y).noalias() = im2col(x.value()) * as_matrix(w.value());
  as_matrix(y).rowwise() += as_matrix(b.value()).row(0);
  const std::size_t xi = x.id, wi = w.id, bi = b.id;
  return g.record(Op::Conv1d, {xi, wi, bi}, std::move(y),
                  [=](Graph& gr, std::size_t self) {
                    const auto gy = as_matrix(gr.adjoint_ref(self));
                    if (gr.needs_grad(wi))
                      as_matrix(gr.adjoint_buffer(wi)).noalias() += im2col(gr.value(xi)).transpose() * gy;
                    if (gr.needs_grad(bi)) as_matrix(gr.adjoint_buffer(bi)).row(0) += gy.colwise().sum();
                    if (gr.needs_grad(xi)) {
                      RowMatrix gcol = gy * as_matrix(gr.value(wi)).transpose();
                      Tensor& gx = gr.adjoint_buffer(xi);
                      for (std::size_t t = 0; t < t_out; ++t)
                        for (std::size_t k = 0; k < kernel; ++k) {
                          const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(t * stride + k) - pad;
                          if (p < 0 || p >= static_cast<std::ptrdiff_t>(t_in)) continue;
                          double* dst = gx.row_ptr(static_cast<std::size_t>(p));
                          for (std::size_t c = 0; c < cin; ++c)
                            dst[c] += gcol(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k * cin + c));
                        }
                    }
                  });
}

/// Window of output step t when pooling `in` steps down to `out` steps.
inline std::pair<std::size_t, std::size_t> pool_window(std::size_t t, std::size_t in, std::size_t out) {
  const std::size_t lo = (t * in) / out;
  const std::size_t hi = ((t + 1) * in + out - 1) / out;
  return {lo, hi};
}

/// Adaptive max-pool over time: (T x C) -> (out_len x C). When T is a
/// multiple of out_len this is plain non-overlapping pooling.
inline Var max_pool_time(Var x, std::size_t out_len) {
  Graph& g = *x.graph;
  detail::require_matrix(g, x, "max_pool_time");
  const std::size_t t_in = x.value().rows(), c = x.value().cols();
  if (out_len == 0 || out_len > t_in)
    throw ShapeError(g.next_id(), "max_pool_time: cannot pool " + std::to_string(t_in) + " steps to " +
                                      std::to_string(out_len));
  Tensor y = Tensor::matrix(out_len, c);
  std::vector<std::size_t> arg(out_len * c);
  for (std::size_t t = 0; t < out_len; ++t) {
    const auto [lo, hi] = pool_window(t, t_in, out_len);
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = lo;
      for (std::size_t s = lo + 1; s < hi; ++s)
        if (x.value()(s, j) > x.value()(best, j) || std::isnan(x.value()(s, j))) best = s;
      y(t, j) = x.value()(best, j);
      arg[t * c + j] = best;
    }
  }
  const std::size_t xi = x.id;
  return g.record(Op::MaxPoolTime, {xi}, std::move(y), [xi, c, arg = std::move(arg)](Graph& gr, std::size_t self) {
    const auto& gy = gr.adjoint_ref(self).values;
    Tensor& gx = gr.adjoint_buffer(xi);
    for (std::size_t k = 0; k < gy.size(); ++k) gx(arg[k], k % c) += gy[k];
  });
}

/// One LSTM step for a batch of rows.
/// x: (B x in); state: (B x 2H) laid out [h | c]; w: ((in+H) x 4H); b: (1 x 4H).
/// Gate column blocks are [input | forget | output | candidate]. Returns the
/// new state [h' | c'].
inline Var lstm_cell(Var x, Var state, Var w, Var b) {
  Graph& g = detail::graph_of({x, state, w, b});
  const std::size_t batch = x.value().rows(), in = x.value().cols();
  const std::size_t h2 = state.value().cols();
  if (h2 % 2 != 0 || state.value().rows() != batch)
    throw ShapeError(g.next_id(), "lstm_cell: state " + shape_string(state.value().shape) + " vs input " +
                                      shape_string(x.value().shape));
  const std::size_t hid = h2 / 2;
  if (w.value().rows() != in + hid || w.value().cols() != 4 * hid || b.value().rows() != 1 ||
      b.value().cols() != 4 * hid)
    throw ShapeError(g.next_id(), "lstm_cell: W " + shape_string(w.value().shape) + ", b " +
                                      shape_string(b.value().shape) + " for input " + std::to_string(in) +
                                      ", hidden " + std::to_string(hid));
  const auto xs = as_matrix(x.value());
  const auto st = as_matrix(state.value());
  RowMatrix xh(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in + hid));
  xh.leftCols(static_cast<Eigen::Index>(in)) = xs;
  xh.rightCols(static_cast<Eigen::Index>(hid)) = st.leftCols(static_cast<Eigen::Index>(hid));
  auto gates = std::make_shared<RowMatrix>(xh * as_matrix(w.value()));
  gates->rowwise() += as_matrix(b.value()).row(0);
  const auto H = static_cast<Eigen::Index>(hid);
  Tensor y = Tensor::matrix(batch, h2);
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(batch); ++r) {
    for (Eigen::Index j = 0; j < H; ++j) {
      double& zi = (*gates)(r, j);
      double& zf = (*gates)(r, H + j);
      double& zo = (*gates)(r, 2 * H + j);
      double& zg = (*gates)(r, 3 * H + j);
      zi = detail::sigmoid(zi);
      zf = detail::sigmoid(zf);
      zo = detail::sigmoid(zo);
      zg = std::tanh(zg);
      const double c_new = zf * st(r, H + j) + zi * zg;
      y(static_cast<std::size_t>(r), static_cast<std::size_t>(H + j)) = c_new;
      y(static_cast<std::size_t>(r), static_cast<std::size_t>(j)) = zo * std::tanh(c_new);
    }
  }
  const std::size_t xi = x.id, si = state.id, wi = w.id, bi = b.id;
  return g.record(
      Op::LstmCell, {xi, si, wi, bi}, std::move(y),
      [=, xh = std::move(xh)](Graph& gr, std::size_t self) {
        const Tensor& gy = gr.adjoint_ref(self);
        const Tensor& yv = gr.value(self);
        const Tensor& sv = gr.value(si);
        const RowMatrix& act = *gates;
        RowMatrix dz(act.rows(), act.cols());
        Tensor* gs = gr.needs_grad(si) ? &gr.adjoint_buffer(si) : nullptr;
        for (Eigen::Index r = 0; r < act.rows(); ++r) {
          const auto ru = static_cast<std::size_t>(r);
          for (Eigen::Index j = 0; j < H; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            const double i_g = act(r, j), f_g = act(r, H + j), o_g = act(r, 2 * H + j), c_g = act(r, 3 * H + j);
            const double tc = std::tanh(yv(ru, hid + ju));
            const double gh = gy(ru, ju);
            const double dc = gy(ru, hid + ju) + gh * o_g * (1.0 - tc * tc);
            dz(r, j) = dc * c_g * i_g * (1.0 - i_g);
            dz(r, H + j) = dc * sv(ru, hid + ju) * f_g * (1.0 - f_g);
            dz(r, 2 * H + j) = gh * tc * o_g * (1.0 - o_g);
            dz(r, 3 * H + j) = dc * i_g * (1.0 - c_g * c_g);
            if (gs) (*gs)(ru, hid + ju) += dc * f_g;
          }
        }
        if (gr.needs_grad(wi)) as_matrix(gr.adjoint_buffer(wi)).noalias() += xh.transpose() * dz;
        if (gr.needs_grad(bi)) as_matrix(gr.adjoint_buffer(bi)).row(0) += dz.colwise().sum();
        if (gr.needs_grad(xi) || gs) {
          RowMatrix dxh = dz * as_matrix(gr.value(wi)).transpose();
          const auto in_cols = static_cast<Eigen::Index>(in);
          if (gr.needs_grad(xi)) as_matrix(gr.adjoint_buffer(xi)) += dxh.leftCols(in_cols);
          if (gs) as_matrix(*gs).leftCols(H) += dxh.rightCols(H);
        }
      });
}

// ---- operator sugar --------------------------------------------------------

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }

}  // namespace seqda::ad
