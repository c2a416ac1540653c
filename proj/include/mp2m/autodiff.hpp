#pragma once

// Reverse-mode differentiation over Tensor values. A Graph records every
// operation as a node whose parents were created before it, so creation order
// is a topological order and backward() is one reverse sweep.

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mp2m/tensor.hpp"

namespace mp2m::ad {

struct Parameter {
  Tensor value;
  Tensor grad;
};

// Named trainable tensors, iterated in name order.
class ParamStore {
 public:
  // Throws ArgumentError on a duplicate name.
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  // Replaces the value; the shape must match.
  void set_value(const std::string& name, const Tensor& value);

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  std::vector<std::string> names() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Values compared bit-exactly.
  bool same_values(const ParamStore& other) const;

  // `params <n>` then per tensor `param <name> <rank> <extents...>` and one
  // line of hex-float values.
  void write(std::ostream& out) const;
  // Reads the block produced by write(). When `expected` is non-null every
  // name and shape must match it exactly.
  static ParamStore read(std::istream& in, const ParamStore* expected = nullptr);

 private:
  std::map<std::string, Parameter> params_;
};

class Graph;

// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the gradient of the node's output and accumulates into the
// gradients of its parents. Entries for parents that do not need a gradient
// are null.
using BackwardFn =
    std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter; repeated calls with the same name return the
  // same node. backward() accumulates into the parameter's grad.
  Var param(ParamStore& store, const std::string& name);

  // Extension point used by every primitive. `value` is checked for
  // non-finite entries in debug builds.
  Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and visits every node once in reverse creation
  // order. The loss must hold exactly one element.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  std::map<const Parameter*, std::size_t> param_nodes_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double factor);
// a (m x n) plus a bias row (1 x n or n) added to every row.
Var add_bias(Var a, Var bias);
// x * w + b.
Var affine(Var x, Var w, Var b);
// Row-wise normalization followed by gamma/beta (1 x n each).
Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax(Var x);  // row-wise
// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(Var x);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var reshape(Var x, std::vector<std::size_t> shape);
Var sum(Var x);
Var mean(Var x);
// Mean of squared elementwise differences.
Var mse(Var pred, Var target);
// Scaled dot-product self attention with n_heads heads over n_seq independent
// sequences stacked row-wise: q, k, v are (n_seq * seq_len) x d.
Var attention(Var q, Var k, Var v, std::size_t n_seq, std::size_t n_heads);

// ---- gradient checking ----------------------------------------------------

struct GradCheckOptions {
  double h = 1e-5;
  double tol_rel = 1e-4;
  std::size_t n_coords = 200;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> worst;  // sorted by descending error, at most 10
};

// Compares backward() against central differences on sampled parameter
// coordinates. Every parameter tensor gets at least one coordinate; the rest
// are drawn uniformly. `loss` must rebuild the graph from the current
// parameter values each call and return a single-element node.
GradCheckReport grad_check(const std::function<Var(Graph&)>& loss,
                           ParamStore& params,
                           const GradCheckOptions& options = {});

}  // namespace mp2m::ad
