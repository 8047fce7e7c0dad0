#pragma once

// Reverse-mode differentiation over a tape of scalar nodes.
//
// A Graph records every operation as a node holding its forward value and the
// local partial derivative towards each parent. Nodes are appended in creation
// order, so the tape is a topological order by construction and backward() is
// a single reverse sweep. Accumulation order is fixed, which makes gradients
// bit-reproducible for a given sequence of operations.
//
// Generic numeric code is written once against the overload set in this
// namespace (ad::exp, ad::log_sigmoid, ad::dot, ...) and instantiated with
// either `double` (plain evaluation) or `Var` (recorded on a graph).

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "pacs/errors.hpp"

namespace pacs::ad {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
  leaf,
  parameter,
  stop_gradient,
  add,
  mul,
  div,
  neg,
  exp,
  expm1,
  log,
  log_sigmoid,
  tanh,
  sqrt,
  sum,
  dot,
  log_softmax,
  select,
};

constexpr std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::parameter: return "parameter";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::exp: return "exp";
    case OpKind::expm1: return "expm1";
    case OpKind::log: return "log";
    case OpKind::log_sigmoid: return "log_sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::sqrt: return "sqrt";
    case OpKind::sum: return "sum";
    case OpKind::dot: return "dot";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::select: return "select";
  }
  return "unknown";
}

struct Edge {
  NodeId parent;
  double partial;
};

/// Dense map from parameter index (creation order of Graph::parameter) to a partial derivative.
class GradientMap {
 public:
  GradientMap() = default;
  explicit GradientMap(std::size_t n) : values_(n, 0.0) {}
  explicit GradientMap(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double l2_norm() const {
    double s = 0.0;
    for (double g : values_) s += g * g;
    return std::sqrt(s);
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double g) { return std::isfinite(g); });
  }

  GradientMap& operator+=(const GradientMap& other) {
    if (other.size() != size()) throw InputError("GradientMap size mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  GradientMap& operator*=(double s) {
    for (double& g : values_) g *= s;
    return *this;
  }

  friend GradientMap operator+(GradientMap a, const GradientMap& b) { return a += b; }

 private:
  std::vector<double> values_;
};

class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while the graph is alive and not cleared.
class Var {
 public:
  Var() = default;

  inline double value() const;
  NodeId id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }

 private:
  friend class Graph;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(double value) { return finish(OpKind::leaf, value, edges_.size()); }

  /// Leaf that receives an entry in the GradientMap returned by backward().
  Var parameter(double value) {
    Var v = finish(OpKind::parameter, value, edges_.size());
    parameters_.push_back(v.id());
    return v;
  }

  std::vector<Var> parameters(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(parameter(v));
    return out;
  }

  /// Drops all nodes but keeps allocated capacity for the next build.
  void clear() {
    nodes_.clear();
    edges_.clear();
    parameters_.clear();
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  std::size_t parameter_count() const noexcept { return parameters_.size(); }

  double value(NodeId id) const { return nodes_[id].value; }
  OpKind kind(NodeId id) const { return nodes_[id].kind; }
  std::span<const Edge> parents(NodeId id) const {
    const Node& n = nodes_[id];
    return {edges_.data() + n.first_edge, n.edge_count};
  }

  // Low-level node construction: record edges with add_edge() after begin(), then finish().
  std::size_t begin() const noexcept { return edges_.size(); }
  void add_edge(Var parent, double partial) {
    assert(parent.graph_ == this);
    edges_.push_back({parent.id_, partial});
  }
  Var finish(OpKind kind, double value, std::size_t first_edge) {
    const auto id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back({value, static_cast<std::uint32_t>(first_edge),
                      static_cast<std::uint32_t>(edges_.size() - first_edge), kind});
    return {this, id};
  }

  Var unary(OpKind kind, double value, Var a, double da) {
    const std::size_t first = begin();
    add_edge(a, da);
    return finish(kind, value, first);
  }

  Var binary(OpKind kind, double value, Var a, double da, Var b, double db) {
    const std::size_t first = begin();
    add_edge(a, da);
    add_edge(b, db);
    return finish(kind, value, first);
  }

  /// Partial derivatives of `root` with respect to every parameter leaf.
  /// Throws NumericError naming the first node (in reverse order) whose value or
  /// adjoint is non-finite while it carries gradient.
  GradientMap backward(Var root) const {
    assert(root.graph_ == this);
    std::vector<double> adjoint(root.id_ + 1, 0.0);
    adjoint[root.id_] = 1.0;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      const double a = adjoint[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (!std::isfinite(a) || !std::isfinite(n.value)) {
        throw NumericError("non-finite value during backward pass", i);
      }
      const Edge* e = edges_.data() + n.first_edge;
      for (std::uint32_t k = 0; k < n.edge_count; ++k) adjoint[e[k].parent] += a * e[k].partial;
    }
    GradientMap grads(parameters_.size());
    for (std::size_t k = 0; k < parameters_.size(); ++k) {
      const NodeId id = parameters_[k];
      if (id > root.id_) continue;
      if (!std::isfinite(adjoint[id])) throw NumericError("non-finite parameter gradient", id);
      grads[k] = adjoint[id];
    }
    return grads;
  }

 private:
  struct Node {
    double value;
    std::uint32_t first_edge;
    std::uint32_t edge_count;
    OpKind kind;
  };

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<NodeId> parameters_;
};

inline double Var::value() const { return graph_->value(id_); }

// ---------------------------------------------------------------------------
// Scalar kernels shared by both instantiations.

/// log(sigmoid(x)) = -softplus(-x), finite for every finite x.
inline double stable_log_sigmoid(double x) {
  return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// double overloads

inline double value_of(double x) { return x; }
inline double stop_gradient(double x) { return x; }
inline double exp(double x) { return std::exp(x); }
inline double expm1(double x) { return std::expm1(x); }
inline double log(double x) { return std::log(x); }
inline double tanh(double x) { return std::tanh(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double log_sigmoid(double x) { return stable_log_sigmoid(x); }
inline double select(bool take_first, double a, double b) { return take_first ? a : b; }
inline double clamp(double x, double lo, double hi) { return std::clamp(x, lo, hi); }

inline double sum(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double affine(std::span<const double> w, std::span<const double> x, double bias) {
  return dot(w, x) + bias;
}

inline double log_softmax_at(std::span<const double> logits, std::size_t index) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  return logits[index] - m - std::log(z);
}

// ---------------------------------------------------------------------------
// Var overloads

inline double value_of(Var x) { return x.value(); }

/// Passes the value through and cuts the gradient.
inline Var stop_gradient(Var x) { return x.graph()->finish(OpKind::stop_gradient, x.value(), x.graph()->begin()); }

inline Var operator+(Var a, Var b) { return a.graph()->binary(OpKind::add, a.value() + b.value(), a, 1.0, b, 1.0); }
inline Var operator+(Var a, double c) { return a.graph()->unary(OpKind::add, a.value() + c, a, 1.0); }
inline Var operator+(double c, Var a) { return a + c; }

inline Var operator-(Var a) { return a.graph()->unary(OpKind::neg, -a.value(), a, -1.0); }
inline Var operator-(Var a, Var b) { return a.graph()->binary(OpKind::add, a.value() - b.value(), a, 1.0, b, -1.0); }
inline Var operator-(Var a, double c) { return a.graph()->unary(OpKind::add, a.value() - c, a, 1.0); }
inline Var operator-(double c, Var a) { return a.graph()->unary(OpKind::add, c - a.value(), a, -1.0); }

inline Var operator*(Var a, Var b) {
  return a.graph()->binary(OpKind::mul, a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator*(Var a, double c) { return a.graph()->unary(OpKind::mul, a.value() * c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }

inline Var operator/(Var a, Var b) {
  const double bv = b.value();
  return a.graph()->binary(OpKind::div, a.value() / bv, a, 1.0 / bv, b, -a.value() / (bv * bv));
}
inline Var operator/(Var a, double c) { return a.graph()->unary(OpKind::div, a.value() / c, a, 1.0 / c); }
inline Var operator/(double c, Var b) {
  const double bv = b.value();
  return b.graph()->unary(OpKind::div, c / bv, b, -c / (bv * bv));
}

inline Var exp(Var x) {
  const double e = std::exp(x.value());
  return x.graph()->unary(OpKind::exp, e, x, e);
}

inline Var expm1(Var x) {
  return x.graph()->unary(OpKind::expm1, std::expm1(x.value()), x, std::exp(x.value()));
}

inline Var log(Var x) { return x.graph()->unary(OpKind::log, std::log(x.value()), x, 1.0 / x.value()); }

inline Var tanh(Var x) {
  const double t = std::tanh(x.value());
  return x.graph()->unary(OpKind::tanh, t, x, 1.0 - t * t);
}

inline Var sqrt(Var x) {
  const double s = std::sqrt(x.value());
  return x.graph()->unary(OpKind::sqrt, s, x, 0.5 / s);
}

inline Var log_sigmoid(Var x) {
  // d/dx log sigmoid(x) = sigmoid(-x)
  return x.graph()->unary(OpKind::log_sigmoid, stable_log_sigmoid(x.value()), x, sigmoid(-x.value()));
}

inline Var select(bool take_first, Var a, Var b) {
  Var chosen = take_first ? a : b;
  return chosen.graph()->unary(OpKind::select, chosen.value(), chosen, 1.0);
}

inline Var clamp(Var x, double lo, double hi) {
  Graph& g = *x.graph();
  const double v = x.value();
  if (v < lo) return g.finish(OpKind::select, lo, g.begin());
  if (v > hi) return g.finish(OpKind::select, hi, g.begin());
  return g.unary(OpKind::select, v, x, 1.0);
}

inline Var sum(std::span<const Var> xs) {
  assert(!xs.empty());
  Graph& g = *xs.front().graph();
  const std::size_t first = g.begin();
  double s = 0.0;
  for (Var x : xs) {
    s += x.value();
    g.add_edge(x, 1.0);
  }
  return g.finish(OpKind::sum, s, first);
}

inline Var dot(std::span<const Var> a, std::span<const Var> b) {
  assert(a.size() == b.size() && !a.empty());
  Graph& g = *a.front().graph();
  const std::size_t first = g.begin();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double av = a[i].value();
    const double bv = b[i].value();
    s += av * bv;
    g.add_edge(a[i], bv);
    g.add_edge(b[i], av);
  }
  return g.finish(OpKind::dot, s, first);
}

/// w . x + bias as one node.
inline Var affine(std::span<const Var> w, std::span<const Var> x, Var bias) {
  assert(w.size() == x.size() && !w.empty());
  Graph& g = *bias.graph();
  const std::size_t first = g.begin();
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double wv = w[i].value();
    const double xv = x[i].value();
    s += wv * xv;
    g.add_edge(w[i], xv);
    g.add_edge(x[i], wv);
  }
  g.add_edge(bias, 1.0);
  return g.finish(OpKind::dot, s + bias.value(), first);
}

/// log softmax(logits)[index] as one node.
inline Var log_softmax_at(std::span<const Var> logits, std::size_t index) {
  assert(index < logits.size());
  Graph& g = *logits.front().graph();
  double m = -std::numeric_limits<double>::infinity();
  for (Var l : logits) m = std::max(m, l.value());
  double z = 0.0;
  for (Var l : logits) z += std::exp(l.value() - m);
  const double lse = m + std::log(z);
  const std::size_t first = g.begin();
  for (std::size_t j = 0; j < logits.size(); ++j) {
    const double p = std::exp(logits[j].value() - lse);
    g.add_edge(logits[j], (j == index ? 1.0 : 0.0) - p);
  }
  return g.finish(OpKind::log_softmax, logits[index].value() - lse, first);
}

inline GradientMap backward(const Graph& graph, Var root) { return graph.backward(root); }

// ---------------------------------------------------------------------------
// Finite-difference oracle. Test and verification use only; never on the training path.

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate.
inline GradientMap finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> params, double h = kDefaultFiniteDiffStep) {
  if (!(h > 0.0)) throw InputError("finite difference step must be positive");
  std::vector<double> p(params.begin(), params.end());
  GradientMap grads(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p[i];
    p[i] = x + h;
    const double up = f(p);
    p[i] = x - h;
    const double down = f(p);
    p[i] = x;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value in finite differences", i);
    }
    grads[i] = (up - down) / (2.0 * h);
  }
  return grads;
}

}  // namespace pacs::ad
