#pragma once

// Tensor-level reverse-mode differentiation. A Graph records every operation
// applied to its Vars together with a closure that pushes the output gradient
// back to the inputs; Graph::backward replays those closures in reverse.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vlfau/tensor.hpp"

namespace vlfau::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
class Graph {
 public:
  /// Called with the node's own handle; reads grad(out) and accumulates into inputs.
  using Backward = std::function<void(Graph&, Var out)>;

  /// With record == false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  /// Borrows `value`; it must outlive the graph.
  Var constant_ref(const Tensor<T>& value) {
    Node& n = nodes_.emplace_back();
    n.borrowed = &value;
    return last();
  }

  /// Borrowed trainable leaf. `slot` identifies it in parameters().
  Var parameter(const Tensor<T>& value, int slot) {
    Node& n = nodes_.emplace_back();
    n.borrowed = &value;
    n.needs_grad = record_;
    n.param_slot = slot;
    const Var v = last();
    if (record_) params_.push_back(v);
    return v;
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.borrowed ? *n.borrowed : n.owned;
  }

  const Shape& shape(Var v) const { return value(v).shape; }
  std::size_t numel(Var v) const { return value(v).size(); }

  bool needs_grad(Var v) const { return node(v).needs_grad; }

  /// Gradient buffer of `v`, zero-initialized on first access.
  Tensor<T>& grad(Var v) {
    Node& n = node(v);
    if (n.grad.data.empty()) n.grad = Tensor<T>(value(v).shape);
    return n.grad;
  }

  bool has_grad(Var v) const { return !node(v).grad.data.empty(); }

  /// Appends a node. `back` is dropped unless recording and `needs_grad`.
  Var push(Tensor<T> value, bool needs_grad, Backward back) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(back);
    return last();
  }

  void backward(Var root) {
    if (!record_) throw std::logic_error("backward on a non-recording graph");
    if (numel(root) != 1) {
      throw ShapeError("backward root must be a scalar, got " + shape_str(shape(root)));
    }
    grad(root).data[0] += T(1);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && !n.grad.data.empty()) n.backward(*this, Var{id});
    }
  }

  /// Parameter leaves in creation order.
  const std::vector<Var>& parameters() const { return params_; }
  int param_slot(Var v) const { return node(v).param_slot; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    bool needs_grad = false;
    int param_slot = -1;
    Backward backward;
  };

  Var last() const { return Var{static_cast<int>(nodes_.size()) - 1}; }
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

  bool record_;
  std::deque<Node> nodes_;
  std::vector<Var> params_;
};

namespace detail {

template <typename T, typename... Vs>
bool any_grad(const Graph<T>& g, Vs... vs) {
  return (g.needs_grad(vs) || ...);
}

/// Leading dimension and the product of the remaining ones.
inline std::pair<int, int> split_first(const Shape& s) {
  if (s.empty()) return {1, 1};
  int rest = 1;
  for (std::size_t i = 1; i < s.size(); ++i) rest *= s[i];
  return {s[0], rest};
}

template <typename T>
void require_same(const Graph<T>& g, Var a, Var b, const char* op) {
  if (g.shape(a) != g.shape(b)) {
    throw ShapeError(std::string(op) + ": shapes differ " + shape_str(g.shape(a)) + " vs " +
                     shape_str(g.shape(b)));
  }
}

/// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename F, typename D>
Var unary(Graph<T>& g, Var a, F f, D dfdx) {
  const Tensor<T>& x = g.value(a);
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return g.push(std::move(y), g.needs_grad(a), [a, dfdx](Graph<T>& g, Var out) {
    const Tensor<T>& x = g.value(a);
    const Tensor<T>& y = g.value(out);
    const Tensor<T>& gy = g.grad(out);
    Tensor<T>& gx = g.grad(a);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product. Rank-1 left operands act as row vectors, rank-1 right
/// operands as column vectors; the result drops the unit dimension.
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  if (A.rank() < 1 || A.rank() > 2 || B.rank() < 1 || B.rank() > 2) {
    throw ShapeError("matmul expects rank 1 or 2 operands");
  }
  const int m = A.rank() == 1 ? 1 : A.dim(0);
  const int k = A.rank() == 1 ? A.dim(0) : A.dim(1);
  const int n = B.rank() == 1 ? 1 : B.dim(1);
  if (k != B.dim(0)) {
    throw ShapeError("matmul inner dims differ: " + shape_str(A.shape) + " x " + shape_str(B.shape));
  }
  Shape out_shape;
  if (A.rank() == 2) out_shape.push_back(m);
  if (B.rank() == 2) out_shape.push_back(n);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> C(out_shape);
  MatMap<T>(C.ptr(), m, n).noalias() = ConstMatMap<T>(A.ptr(), m, k) * ConstMatMap<T>(B.ptr(), k, n);
  return g.push(std::move(C), detail::any_grad(g, a, b), [a, b, m, k, n](Graph<T>& g, Var out) {
    const ConstMatMap<T> dC(g.grad(out).ptr(), m, n);
    if (g.needs_grad(a)) {
      MatMap<T>(g.grad(a).ptr(), m, k).noalias() += dC * ConstMatMap<T>(g.value(b).ptr(), k, n).transpose();
    }
    if (g.needs_grad(b)) {
      MatMap<T>(g.grad(b).ptr(), k, n).noalias() += ConstMatMap<T>(g.value(a).ptr(), m, k).transpose() * dC;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  detail::require_same(g, a, b, "add");
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  Tensor<T> C(A.shape);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = A[i] + B[i];
  return g.push(std::move(C), detail::any_grad(g, a, b), [a, b](Graph<T>& g, Var out) {
    const Tensor<T>& gc = g.grad(out);
    for (Var v : {a, b}) {
      if (!g.needs_grad(v)) continue;
      Tensor<T>& gv = g.grad(v);
      for (std::size_t i = 0; i < gc.size(); ++i) gv[i] += gc[i];
    }
  });
}

/// Sum of same-shaped terms.
template <typename T>
Var add_n(Graph<T>& g, const std::vector<Var>& terms) {
  if (terms.empty()) throw ShapeError("add_n of nothing");
  Tensor<T> C(g.shape(terms[0]));
  bool grad = false;
  for (Var v : terms) {
    detail::require_same(g, terms[0], v, "add_n");
    const Tensor<T>& x = g.value(v);
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += x[i];
    grad = grad || g.needs_grad(v);
  }
  return g.push(std::move(C), grad, [terms](Graph<T>& g, Var out) {
    const Tensor<T>& gc = g.grad(out);
    for (Var v : terms) {
      if (!g.needs_grad(v)) continue;
      Tensor<T>& gv = g.grad(v);
      for (std::size_t i = 0; i < gc.size(); ++i) gv[i] += gc[i];
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  detail::require_same(g, a, b, "mul");
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  Tensor<T> C(A.shape);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = A[i] * B[i];
  return g.push(std::move(C), detail::any_grad(g, a, b), [a, b](Graph<T>& g, Var out) {
    const Tensor<T>& gc = g.grad(out);
    if (g.needs_grad(a)) {
      const Tensor<T>& B = g.value(b);
      Tensor<T>& ga = g.grad(a);
      for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * B[i];
    }
    if (g.needs_grad(b)) {
      const Tensor<T>& A = g.value(a);
      Tensor<T>& gb = g.grad(b);
      for (std::size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i] * A[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T s) {
  const Tensor<T>& A = g.value(a);
  Tensor<T> C(A.shape);
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = A[i] * s;
  return g.push(std::move(C), g.needs_grad(a), [a, s](Graph<T>& g, Var out) {
    const Tensor<T>& gc = g.grad(out);
    Tensor<T>& ga = g.grad(a);
    for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * s;
  });
}

template <typename T>
Var relu(Graph<T>& g, Var a) {
  return detail::unary(
      g, a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Var sigmoid(Graph<T>& g, Var a) {
  return detail::unary(
      g, a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var tanh(Graph<T>& g, Var a) {
  return detail::unary(
      g, a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------------------
// Broadcasting over a leading "row" axis: x is (m, ...) viewed as (m, rest).

/// x[r, :] + b[r]
template <typename T>
Var add_row_bias(Graph<T>& g, Var x, Var b) {
  const auto [m, rest] = detail::split_first(g.shape(x));
  if (g.numel(b) != static_cast<std::size_t>(m)) {
    throw ShapeError("add_row_bias: bias " + shape_str(g.shape(b)) + " vs " + shape_str(g.shape(x)));
  }
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& B = g.value(b);
  Tensor<T> Y(X.shape);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < rest; ++c) Y[r * rest + c] = X[r * rest + c] + B[r];
  return g.push(std::move(Y), detail::any_grad(g, x, b), [x, b, m, rest](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    if (g.needs_grad(x)) {
      Tensor<T>& gx = g.grad(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (g.needs_grad(b)) {
      Tensor<T>& gb = g.grad(b);
      for (int r = 0; r < m; ++r) {
        T s = 0;
        for (int c = 0; c < rest; ++c) s += gy[r * rest + c];
        gb[r] += s;
      }
    }
  });
}

/// x[r, :] * s[r]
template <typename T>
Var mul_rows(Graph<T>& g, Var x, Var s) {
  const auto [m, rest] = detail::split_first(g.shape(x));
  if (g.numel(s) != static_cast<std::size_t>(m)) {
    throw ShapeError("mul_rows: gate " + shape_str(g.shape(s)) + " vs " + shape_str(g.shape(x)));
  }
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& S = g.value(s);
  Tensor<T> Y(X.shape);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < rest; ++c) Y[r * rest + c] = X[r * rest + c] * S[r];
  return g.push(std::move(Y), detail::any_grad(g, x, s), [x, s, m, rest](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    const Tensor<T>& X = g.value(x);
    const Tensor<T>& S = g.value(s);
    if (g.needs_grad(x)) {
      Tensor<T>& gx = g.grad(x);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < rest; ++c) gx[r * rest + c] += gy[r * rest + c] * S[r];
    }
    if (g.needs_grad(s)) {
      Tensor<T>& gs = g.grad(s);
      for (int r = 0; r < m; ++r) {
        T acc = 0;
        for (int c = 0; c < rest; ++c) acc += gy[r * rest + c] * X[r * rest + c];
        gs[r] += acc;
      }
    }
  });
}

/// x[r, c] * s[c] for x viewed as (m, rest) and s of size rest.
template <typename T>
Var mul_cols(Graph<T>& g, Var x, Var s) {
  const auto [m, rest] = detail::split_first(g.shape(x));
  if (g.numel(s) != static_cast<std::size_t>(rest)) {
    throw ShapeError("mul_cols: gate " + shape_str(g.shape(s)) + " vs " + shape_str(g.shape(x)));
  }
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& S = g.value(s);
  Tensor<T> Y(X.shape);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < rest; ++c) Y[r * rest + c] = X[r * rest + c] * S[c];
  return g.push(std::move(Y), detail::any_grad(g, x, s), [x, s, m, rest](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    const Tensor<T>& X = g.value(x);
    const Tensor<T>& S = g.value(s);
    if (g.needs_grad(x)) {
      Tensor<T>& gx = g.grad(x);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < rest; ++c) gx[r * rest + c] += gy[r * rest + c] * S[c];
    }
    if (g.needs_grad(s)) {
      Tensor<T>& gs = g.grad(s);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < rest; ++c) gs[c] += gy[r * rest + c] * X[r * rest + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions. "rest" reductions collapse all trailing axes to give (m);
// "first" reductions collapse the leading axis to give (1, trailing...).

namespace detail {

template <typename T, bool Max, bool OverRest>
Var reduce(Graph<T>& g, Var x) {
  const auto [m, rest] = split_first(g.shape(x));
  const Tensor<T>& X = g.value(x);
  Shape out_shape;
  if (OverRest) {
    out_shape = {m};
  } else {
    out_shape = g.shape(x);
    out_shape[0] = 1;
  }
  const int outer = OverRest ? m : rest;
  const int inner = OverRest ? rest : m;
  auto at = [rest = rest](int o, int i) { return OverRest ? o * rest + i : i * rest + o; };
  Tensor<T> Y(out_shape);
  std::vector<int> arg;
  if (Max) arg.resize(static_cast<std::size_t>(outer));
  for (int o = 0; o < outer; ++o) {
    if (Max) {
      int best = 0;
      for (int i = 1; i < inner; ++i)
        if (X[at(o, i)] > X[at(o, best)]) best = i;
      arg[o] = best;
      Y[o] = X[at(o, best)];
    } else {
      T s = 0;
      for (int i = 0; i < inner; ++i) s += X[at(o, i)];
      Y[o] = s / T(inner);
    }
  }
  return g.push(std::move(Y), g.needs_grad(x), [x, outer, inner, at, arg](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    Tensor<T>& gx = g.grad(x);
    for (int o = 0; o < outer; ++o) {
      if (Max) {
        gx[at(o, arg[o])] += gy[o];
      } else {
        const T share = gy[o] / T(inner);
        for (int i = 0; i < inner; ++i) gx[at(o, i)] += share;
      }
    }
  });
}

}  // namespace detail

template <typename T>
Var max_over_rest(Graph<T>& g, Var x) { return detail::reduce<T, true, true>(g, x); }
template <typename T>
Var mean_over_rest(Graph<T>& g, Var x) { return detail::reduce<T, false, true>(g, x); }
template <typename T>
Var max_over_first(Graph<T>& g, Var x) { return detail::reduce<T, true, false>(g, x); }
template <typename T>
Var mean_over_first(Graph<T>& g, Var x) { return detail::reduce<T, false, false>(g, x); }

/// Sum of every element, as a (1) tensor.
template <typename T>
Var sum_all(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  T s = 0;
  for (T v : X.data) s += v;
  return g.push(Tensor<T>({1}, s), g.needs_grad(x), [x](Graph<T>& g, Var out) {
    const T gy = g.grad(out)[0];
    Tensor<T>& gx = g.grad(x);
    for (auto& v : gx.data) v += gy;
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  if (shape_numel(shape) != g.numel(x)) {
    throw ShapeError("reshape " + shape_str(g.shape(x)) + " -> " + shape_str(shape));
  }
  Tensor<T> Y(std::move(shape), g.value(x).data);
  return g.push(std::move(Y), g.needs_grad(x), [x](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    Tensor<T>& gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

/// Concatenation along the leading axis; trailing shapes must agree.
template <typename T>
Var concat(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape tail(g.shape(parts[0]).begin() + 1, g.shape(parts[0]).end());
  int lead = 0;
  bool grad = false;
  for (Var p : parts) {
    const Shape& s = g.shape(p);
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) {
      throw ShapeError("concat: incompatible part " + shape_str(s));
    }
    lead += s[0];
    grad = grad || g.needs_grad(p);
  }
  Shape out_shape = tail;
  out_shape.insert(out_shape.begin(), lead);
  Tensor<T> Y(out_shape);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor<T>& X = g.value(p);
    std::copy(X.data.begin(), X.data.end(), Y.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += X.size();
  }
  return g.push(std::move(Y), grad, [parts](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t n = g.numel(p);
      if (g.needs_grad(p)) {
        Tensor<T>& gp = g.grad(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += gy[off + i];
      }
      off += n;
    }
  });
}

/// Rows [begin, begin + count) of the leading axis.
template <typename T>
Var slice(Graph<T>& g, Var x, int begin, int count) {
  const Shape& s = g.shape(x);
  if (s.empty() || begin < 0 || count < 0 || begin + count > s[0]) {
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                     shape_str(s));
  }
  const auto rest = static_cast<std::size_t>(detail::split_first(s).second);
  Shape out_shape = s;
  out_shape[0] = count;
  const Tensor<T>& X = g.value(x);
  const std::size_t off = static_cast<std::size_t>(begin) * rest;
  Tensor<T> Y(out_shape);
  std::copy_n(X.data.begin() + static_cast<std::ptrdiff_t>(off), Y.size(), Y.data.begin());
  return g.push(std::move(Y), g.needs_grad(x), [x, off](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    Tensor<T>& gx = g.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
  });
}

/// Row `index` of a (rows, width) table as a (width) vector.
template <typename T>
Var row(Graph<T>& g, Var table, int index) {
  const Shape& s = g.shape(table);
  if (s.size() != 2 || index < 0 || index >= s[0]) {
    throw ShapeError("row " + std::to_string(index) + " of " + shape_str(s));
  }
  return reshape(g, slice(g, table, index, 1), Shape{s[1]});
}

// ---------------------------------------------------------------------------
// Softmax family (rank-1 inputs)

template <typename T>
void softmax_inplace(std::span<T> v) {
  const T mx = *std::max_element(v.begin(), v.end());
  T s = 0;
  for (T& x : v) {
    x = std::exp(x - mx);
    s += x;
  }
  for (T& x : v) x /= s;
}

template <typename T>
Var softmax(Graph<T>& g, Var x) {
  Tensor<T> Y = g.value(x);
  if (Y.size() == 0) throw ShapeError("softmax of empty vector");
  softmax_inplace(std::span<T>(Y.data));
  return g.push(std::move(Y), g.needs_grad(x), [x](Graph<T>& g, Var out) {
    const Tensor<T>& y = g.value(out);
    const Tensor<T>& gy = g.grad(out);
    T dot = 0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
    Tensor<T>& gx = g.grad(x);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (gy[i] - dot);
  });
}

/// log softmax(x)[index] as a (1) tensor.
template <typename T>
Var log_softmax_at(Graph<T>& g, Var x, int index) {
  const Tensor<T>& X = g.value(x);
  if (index < 0 || static_cast<std::size_t>(index) >= X.size()) {
    throw ShapeError("log_softmax_at: index " + std::to_string(index) + " out of " + shape_str(X.shape));
  }
  const T mx = *std::max_element(X.data.begin(), X.data.end());
  T s = 0;
  for (T v : X.data) s += std::exp(v - mx);
  const T lse = mx + std::log(s);
  return g.push(Tensor<T>({1}, X[static_cast<std::size_t>(index)] - lse), g.needs_grad(x),
                [x, index, lse](Graph<T>& g, Var out) {
                  const T gy = g.grad(out)[0];
                  const Tensor<T>& X = g.value(x);
                  Tensor<T>& gx = g.grad(x);
                  for (std::size_t i = 0; i < X.size(); ++i) gx[i] -= gy * std::exp(X[i] - lse);
                  gx[static_cast<std::size_t>(index)] += gy;
                });
}

// ---------------------------------------------------------------------------
// Convolution and pooling on (C, H, W) maps

struct ConvGeometry {
  int in_channels, height, width, kernel, stride, pad;
  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
};

namespace detail {

template <typename T>
void im2col(const T* x, const ConvGeometry& geo, T* cols) {
  const int oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel;
  for (int c = 0; c < geo.in_channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* dst = cols + static_cast<std::ptrdiff_t>(((c * k + ki) * k + kj)) * oh * ow;
        const T* src = x + static_cast<std::ptrdiff_t>(c) * geo.height * geo.width;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * geo.stride - geo.pad + ki;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * geo.stride - geo.pad + kj;
            const bool inside = iy >= 0 && iy < geo.height && ix >= 0 && ix < geo.width;
            dst[oy * ow + ox] = inside ? src[iy * geo.width + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& geo, T* x) {
  const int oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel;
  for (int c = 0; c < geo.in_channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* src = cols + static_cast<std::ptrdiff_t>(((c * k + ki) * k + kj)) * oh * ow;
        T* dst = x + static_cast<std::ptrdiff_t>(c) * geo.height * geo.width;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * geo.stride - geo.pad + ki;
          if (iy < 0 || iy >= geo.height) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * geo.stride - geo.pad + kj;
            if (ix >= 0 && ix < geo.width) dst[iy * geo.width + ix] += src[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution of x (C, H, W) with w (O, C, k, k) and optional bias (O).
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var bias, int stride, int pad) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& W = g.value(w);
  if (X.rank() != 3 || W.rank() != 4 || W.dim(1) != X.dim(0) || W.dim(2) != W.dim(3)) {
    throw ShapeError("conv2d: input " + shape_str(X.shape) + " kernel " + shape_str(W.shape));
  }
  if (bias.valid() && g.numel(bias) != static_cast<std::size_t>(W.dim(0))) {
    throw ShapeError("conv2d: bias " + shape_str(g.shape(bias)) + " for " + std::to_string(W.dim(0)) +
                     " filters");
  }
  const ConvGeometry geo{X.dim(0), X.dim(1), X.dim(2), W.dim(2), stride, pad};
  const int oc = W.dim(0), oh = geo.out_h(), ow = geo.out_w(), patch = geo.patch();
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: empty output for input " + shape_str(X.shape));
  const int npos = oh * ow;
  Tensor<T> cols({patch, npos});
  detail::im2col(X.ptr(), geo, cols.ptr());
  Tensor<T> Y({oc, oh, ow});
  MatMap<T> y(Y.ptr(), oc, npos);
  y.noalias() = ConstMatMap<T>(W.ptr(), oc, patch) * ConstMatMap<T>(cols.ptr(), patch, npos);
  if (bias.valid()) {
    const Tensor<T>& B = g.value(bias);
    for (int o = 0; o < oc; ++o) y.row(o).array() += B[static_cast<std::size_t>(o)];
  }
  const bool grad = g.needs_grad(x) || g.needs_grad(w) || (bias.valid() && g.needs_grad(bias));
  if (!grad || !g.recording()) return g.push(std::move(Y), false, nullptr);
  return g.push(std::move(Y), true,
                [x, w, bias, geo, oc, npos, patch, cols = std::move(cols)](Graph<T>& g, Var out) {
                  const ConstMatMap<T> dy(g.grad(out).ptr(), oc, npos);
                  if (g.needs_grad(w)) {
                    MatMap<T>(g.grad(w).ptr(), oc, patch).noalias() +=
                        dy * ConstMatMap<T>(cols.ptr(), patch, npos).transpose();
                  }
                  if (bias.valid() && g.needs_grad(bias)) {
                    Tensor<T>& gb = g.grad(bias);
                    for (int o = 0; o < oc; ++o) gb[static_cast<std::size_t>(o)] += dy.row(o).sum();
                  }
                  if (g.needs_grad(x)) {
                    RowMat<T> dcols = ConstMatMap<T>(g.value(w).ptr(), oc, patch).transpose() * dy;
                    detail::col2im_add(dcols.data(), geo, g.grad(x).ptr());
                  }
                });
}

/// Non-overlapping average pooling of (C, H, W) by `factor` in both axes.
template <typename T>
Var avg_pool(Graph<T>& g, Var x, int factor) {
  const Tensor<T>& X = g.value(x);
  if (X.rank() != 3 || factor < 1 || X.dim(1) % factor || X.dim(2) % factor) {
    throw ShapeError("avg_pool by " + std::to_string(factor) + " of " + shape_str(X.shape));
  }
  if (factor == 1) return reshape(g, x, X.shape);
  const int c = X.dim(0), h = X.dim(1), w = X.dim(2), oh = h / factor, ow = w / factor;
  const T inv = T(1) / T(factor * factor);
  Tensor<T> Y({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        Y[(static_cast<std::size_t>(ch) * oh + y / factor) * ow + xx / factor] +=
            X[(static_cast<std::size_t>(ch) * h + y) * w + xx] * inv;
  return g.push(std::move(Y), g.needs_grad(x), [x, c, h, w, oh, ow, factor, inv](Graph<T>& g, Var out) {
    const Tensor<T>& gy = g.grad(out);
    Tensor<T>& gx = g.grad(x);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          gx[(static_cast<std::size_t>(ch) * h + y) * w + xx] +=
              gy[(static_cast<std::size_t>(ch) * oh + y / factor) * ow + xx / factor] * inv;
  });
}

// ---------------------------------------------------------------------------
// Recurrent cell

/// Pointwise LSTM update. gates = [i; f; g; o] pre-activations (4h), c_prev (h).
/// Returns [h_new; c_new] (2h).
template <typename T>
Var lstm_cell(Graph<T>& g, Var gates, Var c_prev) {
  const Tensor<T>& G = g.value(gates);
  const Tensor<T>& C = g.value(c_prev);
  const int h = static_cast<int>(C.size());
  if (G.size() != static_cast<std::size_t>(4 * h)) {
    throw ShapeError("lstm_cell: gates " + shape_str(G.shape) + " for hidden " + std::to_string(h));
  }
  // cache: i, f, g, o activations and tanh(c_new)
  Tensor<T> act({5 * h});
  Tensor<T> Y({2 * h});
  for (int j = 0; j < h; ++j) {
    const T ig = sigmoid_scalar(G[j]);
    const T fg = sigmoid_scalar(G[h + j]);
    const T gg = std::tanh(G[2 * h + j]);
    const T og = sigmoid_scalar(G[3 * h + j]);
    const T c = fg * C[j] + ig * gg;
    const T tc = std::tanh(c);
    act[j] = ig;
    act[h + j] = fg;
    act[2 * h + j] = gg;
    act[3 * h + j] = og;
    act[4 * h + j] = tc;
    Y[j] = og * tc;
    Y[h + j] = c;
  }
  return g.push(std::move(Y), detail::any_grad(g, gates, c_prev),
                [gates, c_prev, h, act = std::move(act)](Graph<T>& g, Var out) {
                  const Tensor<T>& gy = g.grad(out);
                  const Tensor<T>& C = g.value(c_prev);
                  const bool want_g = g.needs_grad(gates);
                  const bool want_c = g.needs_grad(c_prev);
                  for (int j = 0; j < h; ++j) {
                    const T ig = act[j], fg = act[h + j], gg = act[2 * h + j], og = act[3 * h + j];
                    const T tc = act[4 * h + j];
                    const T dh = gy[j];
                    const T dc = gy[h + j] + dh * og * (T(1) - tc * tc);
                    if (want_g) {
                      Tensor<T>& gg_ = g.grad(gates);
                      gg_[j] += dc * gg * ig * (T(1) - ig);
                      gg_[h + j] += dc * C[j] * fg * (T(1) - fg);
                      gg_[2 * h + j] += dc * ig * (T(1) - gg * gg);
                      gg_[3 * h + j] += dh * tc * og * (T(1) - og);
                    }
                    if (want_c) g.grad(c_prev)[j] += dc * fg;
                  }
                });
}

}  // namespace vlfau::ad
