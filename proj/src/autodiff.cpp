#include "mp2m/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>

#include "kernels.hpp"
#include "mp2m/errors.hpp"
#include "mp2m/rng.hpp"
#include "mp2m/serialize.hpp"

namespace mp2m::ad {

// ---- ParamStore -----------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw ArgumentError("duplicate parameter '" + name + "'");
  Tensor grad(init.shape());
  auto [it, ok] = params_.emplace(name, Parameter{std::move(init), std::move(grad)});
  return it->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::set_value(const std::string& name, const Tensor& value) {
  auto& p = at(name);
  if (p.value.shape() != value.shape()) {
    throw ArgumentError("parameter '" + name + "' has shape " +
                        p.value.shape_string() + ", got " + value.shape_string());
  }
  p.value = value;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    std::fill(p.grad.values().begin(), p.grad.values().end(), 0.0);
  }
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto it = other.params_.begin();
  for (const auto& [name, p] : params_) {
    if (it->first != name || !(it->second.value == p.value)) return false;
    ++it;
  }
  return true;
}

void ParamStore::write(std::ostream& out) const {
  std::string s = "params " + std::to_string(params_.size()) + "\n";
  for (const auto& [name, p] : params_) {
    s += "param " + name + " " + std::to_string(p.value.rank());
    for (auto e : p.value.shape()) s += " " + std::to_string(e);
    s += "\n";
    append_doubles(s, p.value.values());
    s += "\n";
  }
  out << s;
}

ParamStore ParamStore::read(std::istream& in, const ParamStore* expected) {
  RecordReader r(in, "parameters");
  ParamStore store;
  try {
    const long long n = parse_int(r.expect_key("params", 1)[0]);
    if (n < 0) r.fail("negative parameter count");
    for (long long i = 0; i < n; ++i) {
      auto head = r.expect_line();
      if (head.size() < 3 || head[0] != "param") r.fail("expected 'param <name> <rank> ...'");
      const std::string name(head[1]);
      const long long rank = parse_int(head[2]);
      if (rank < 0 || head.size() != static_cast<std::size_t>(rank) + 3) {
        r.fail("bad shape for parameter '" + name + "'");
      }
      std::vector<std::size_t> shape;
      for (long long d = 0; d < rank; ++d) {
        const long long e = parse_int(head[3 + d]);
        if (e < 0) r.fail("negative extent");
        shape.push_back(static_cast<std::size_t>(e));
      }
      const std::size_t count = shape_size(shape);
      std::vector<double> values;
      if (count > 0) {
        auto line = r.expect_line();
        if (line.size() != count) {
          r.fail("parameter '" + name + "' expects " + std::to_string(count) +
                 " values, found " + std::to_string(line.size()));
        }
        values = parse_doubles(line);
      }
      if (expected) {
        if (!expected->contains(name)) r.fail("unexpected parameter '" + name + "'");
        if (expected->at(name).value.shape() != shape) {
          r.fail("parameter '" + name + "' has shape " + Tensor(shape).shape_string() +
                 ", expected " + expected->at(name).value.shape_string());
        }
      }
      store.add(name, Tensor(std::move(shape), std::move(values)));
    }
    if (expected && expected->size() != store.size()) {
      r.fail("parameter set differs from the model definition");
    }
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  return store;
}

// ---- Graph ----------------------------------------------------------------

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) { return make_node(std::move(value), {}, nullptr); }

Var Graph::param(ParamStore& store, const std::string& name) {
  Parameter& p = store.at(name);
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node node;
  node.value = p.value;
  node.param = &p;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_[&p] = id;
  return Var(this, id);
}

Var Graph::make_node(Tensor value, std::vector<Var> parents, BackwardFn backward) {
#ifndef NDEBUG
  assert(value.all_finite() && "non-finite value produced by an autodiff op");
#endif
  Node node;
  node.value = std::move(value);
  for (const auto& p : parents) {
    if (p.graph() != this) throw ArgumentError("operands belong to different graphs");
    node.parents.push_back(p.id());
    node.needs_grad = node.needs_grad || nodes_[p.id()].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ArgumentError("loss belongs to another graph");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ArgumentError("backward needs a scalar loss, got shape " + lv.shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[loss.id()].grad = Tensor(lv.shape(), {1.0});

  std::vector<Tensor*> grad_in;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.param) {
      auto& g = node.param->grad;
      if (g.shape() != node.value.shape()) g = Tensor(node.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
      continue;
    }
    if (!node.backward) continue;
    grad_in.assign(node.parents.size(), nullptr);
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      Node& parent = nodes_[node.parents[i]];
      if (!parent.needs_grad) continue;
      if (parent.grad.empty()) parent.grad = Tensor(parent.value.shape());
      grad_in[i] = &parent.grad;
    }
    node.backward(node.grad, grad_in);
  }
}

// ---- primitives -----------------------------------------------------------

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw ArgumentError(what);
}

Graph& graph_of(Var a) {
  require(a.graph() != nullptr, "operand is not attached to a graph");
  return *a.graph();
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.size() == b.size() && a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
              b.shape_string());
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  require(B.rows() == k, "matmul: inner dimensions differ " + A.shape_string() +
                             " x " + B.shape_string());
  Tensor C = Tensor::zeros(m, n);
  kernels::gemm_acc(A.data().data(), B.data().data(), C.data().data(), m, k, n);
  const Tensor* pa = &A;
  const Tensor* pb = &B;
  return graph_of(a).make_node(
      std::move(C), {a, b},
      [pa, pb, m, k, n](const Tensor& g, std::span<Tensor* const> in) {
        if (in[0]) {
          std::vector<double> bt(k * n);
          kernels::transpose(pb->data().data(), bt.data(), k, n);
          kernels::gemm_acc(g.data().data(), bt.data(), in[0]->data().data(), m, n, k);
        }
        if (in[1]) {
          kernels::gemm_tn_acc(pa->data().data(), g.data().data(),
                               in[1]->data().data(), m, k, n);
        }
      });
}

Var add(Var a, Var b) {
  same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return graph_of(a).make_node(std::move(out), {a, b},
                               [](const Tensor& g, std::span<Tensor* const> in) {
                                 for (auto* t : in) {
                                   if (!t) continue;
                                   for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
                                 }
                               });
}

Var sub(Var a, Var b) {
  same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return graph_of(a).make_node(std::move(out), {a, b},
                               [](const Tensor& g, std::span<Tensor* const> in) {
                                 if (in[0]) {
                                   for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                                 }
                                 if (in[1]) {
                                   for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                                 }
                               });
}

Var mul(Var a, Var b) {
  same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const Tensor* pa = &a.value();
  const Tensor* pb = &b.value();
  return graph_of(a).make_node(std::move(out), {a, b},
                               [pa, pb](const Tensor& g, std::span<Tensor* const> in) {
                                 if (in[0]) {
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                     (*in[0])[i] += g[i] * (*pb)[i];
                                 }
                                 if (in[1]) {
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                     (*in[1])[i] += g[i] * (*pa)[i];
                                 }
                               });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return graph_of(a).make_node(std::move(out), {a},
                               [factor](const Tensor& g, std::span<Tensor* const> in) {
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   (*in[0])[i] += factor * g[i];
                               });
}

Var add_bias(Var a, Var bias) {
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  require(bias.value().size() == n, "add_bias: bias has " +
                                        std::to_string(bias.value().size()) +
                                        " entries, expected " + std::to_string(n));
  Tensor out = A;
  const Tensor& B = bias.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
  }
  return graph_of(a).make_node(std::move(out), {a, bias},
                               [m, n](const Tensor& g, std::span<Tensor* const> in) {
                                 if (in[0]) {
                                   for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                                 }
                                 if (in[1]) {
                                   for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < n; ++j)
                                       (*in[1])[j] += g[i * n + j];
                                 }
                               });
}

Var affine(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
  require(W.rows() == k, "affine: input has " + std::to_string(k) +
                             " features, weight is " + W.shape_string());
  require(b.value().size() == n, "affine: bias size mismatch");
  Tensor out = Tensor::zeros(m, n);
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = B[j];
  }
  kernels::gemm_acc(X.data().data(), W.data().data(), out.data().data(), m, k, n);
  const Tensor* px = &X;
  const Tensor* pw = &W;
  return graph_of(x).make_node(
      std::move(out), {x, w, b},
      [px, pw, m, k, n](const Tensor& g, std::span<Tensor* const> in) {
        if (in[0]) {
          std::vector<double> wt(k * n);
          kernels::transpose(pw->data().data(), wt.data(), k, n);
          kernels::gemm_acc(g.data().data(), wt.data(), in[0]->data().data(), m, n, k);
        }
        if (in[1]) {
          kernels::gemm_tn_acc(px->data().data(), g.data().data(),
                               in[1]->data().data(), m, k, n);
        }
        if (in[2]) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*in[2])[j] += g[i * n + j];
        }
      });
}

Var layernorm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  require(gamma.value().size() == n && beta.value().size() == n,
          "layernorm: gamma/beta must have " + std::to_string(n) + " entries");
  require(eps >= 0.0, "layernorm: eps must be >= 0");
  Tensor out = Tensor::zeros(m, n);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mu) * is;
      (*xhat)[i * n + j] = xh;
      out[i * n + j] = xh * G[j] + B[j];
    }
  }
  const Tensor* pg = &G;
  return graph_of(x).make_node(
      std::move(out), {x, gamma, beta},
      [xhat, inv_std, pg, m, n](const Tensor& g, std::span<Tensor* const> in) {
        const auto& xh = *xhat;
        if (in[1] || in[2]) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              if (in[1]) (*in[1])[j] += g[i * n + j] * xh[i * n + j];
              if (in[2]) (*in[2])[j] += g[i * n + j];
            }
          }
        }
        if (in[0]) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * (*pg)[j];
              mean_d += d;
              mean_dx += d * xh[i * n + j];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * (*pg)[j];
              (*in[0])[i * n + j] +=
                  (*inv_std)[i] * (d - mean_d - xh[i * n + j] * mean_dx);
            }
          }
        }
      });
}

Var softmax(Var x) {
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  Graph& graph = graph_of(x);
  // Nodes are appended, so the new node's id is the current size.
  const std::size_t self = graph.size();
  return graph.make_node(
      std::move(out), {x},
      [&graph, self, m, n](const Tensor& g, std::span<Tensor* const> in) {
        const Tensor& y = graph.value(self);
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            (*in[0])[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
      });
}

Var gelu(Var x) {
  constexpr double kC = 0.044715;
  const double k = std::sqrt(2.0 / std::numbers::pi);
  const Tensor& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double v = X[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + kC * v * v * v)));
  }
  const Tensor* px = &X;
  return graph_of(x).make_node(std::move(out), {x},
                               [px, k](const Tensor& g, std::span<Tensor* const> in) {
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   const double v = (*px)[i];
                                   const double t = std::tanh(k * (v + kC * v * v * v));
                                   const double d = 0.5 * (1.0 + t) +
                                                    0.5 * v * (1.0 - t * t) * k *
                                                        (1.0 + 3.0 * kC * v * v);
                                   (*in[0])[i] += g[i] * d;
                                 }
                               });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out = Tensor::zeros(m, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + off + j] = v[i * widths[k] + j];
    off += widths[k];
  }
  return graph_of(parts[0]).make_node(
      std::move(out), std::vector<Var>(parts.begin(), parts.end()),
      [widths, m, total](const Tensor& g, std::span<Tensor* const> in) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (in[k]) {
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j)
                (*in[k])[i * widths[k] + j] += g[i * total + off + j];
          }
          off += widths[k];
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<std::size_t> sizes;
  std::vector<double> data;
  for (const auto& p : parts) {
    require(p.cols() == n, "concat_rows: column counts differ");
    sizes.push_back(p.value().size());
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  const std::size_t rows = data.size() / n;
  return graph_of(parts[0]).make_node(
      Tensor({rows, n}, std::move(data)), std::vector<Var>(parts.begin(), parts.end()),
      [sizes](const Tensor& g, std::span<Tensor* const> in) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (in[k]) {
            for (std::size_t i = 0; i < sizes[k]; ++i) (*in[k])[i] += g[off + i];
          }
          off += sizes[k];
        }
      });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  Tensor out = Tensor::zeros(rows.size(), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < X.rows(), "gather_rows: index out of range");
    std::copy_n(X.data().data() + rows[i] * n, n, out.data().data() + i * n);
  }
  return graph_of(x).make_node(
      std::move(out), {x},
      [rows = std::move(rows), n](const Tensor& g, std::span<Tensor* const> in) {
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < n; ++j) (*in[0])[rows[i] * n + j] += g[i * n + j];
      });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return graph_of(x).make_node(std::move(out), {x},
                               [](const Tensor& g, std::span<Tensor* const> in) {
                                 for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                               });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return graph_of(x).make_node(Tensor({1, 1}, {s}), {x},
                               [](const Tensor& g, std::span<Tensor* const> in) {
                                 for (auto& v : in[0]->values()) v += g[0];
                               });
}

Var mean(Var x) {
  require(x.value().size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var mse(Var pred, Var target) {
  same_shape(pred.value(), target.value(), "mse");
  const Tensor& P = pred.value();
  const Tensor& T = target.value();
  require(P.size() > 0, "mse: empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double d = P[i] - T[i];
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(P.size());
  const Tensor* pp = &P;
  const Tensor* pt = &T;
  return graph_of(pred).make_node(
      Tensor({1, 1}, {s * inv}), {pred, target},
      [pp, pt, inv](const Tensor& g, std::span<Tensor* const> in) {
        for (std::size_t i = 0; i < pp->size(); ++i) {
          const double d = 2.0 * inv * g[0] * ((*pp)[i] - (*pt)[i]);
          if (in[0]) (*in[0])[i] += d;
          if (in[1]) (*in[1])[i] -= d;
        }
      });
}

Var attention(Var q, Var k, Var v, std::size_t n_seq, std::size_t n_heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  same_shape(Q, K, "attention");
  same_shape(Q, V, "attention");
  const std::size_t rows = Q.rows(), d = Q.cols();
  require(n_seq > 0 && rows % n_seq == 0, "attention: rows not divisible by n_seq");
  require(n_heads > 0 && d % n_heads == 0, "attention: width not divisible by n_heads");
  const std::size_t len = rows / n_seq, dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<double>>(n_seq * n_heads * len * len);
  Tensor out = Tensor::zeros(rows, d);
  const double* qd = Q.data().data();
  const double* kd = K.data().data();
  const double* vd = V.data().data();
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* P = probs->data() + (s * n_heads + h) * len * len;
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        const double* qi = qd + (s * len + i) * d + c0;
        double mx = -1e300;
        for (std::size_t j = 0; j < len; ++j) {
          const double* kj = kd + (s * len + j) * d + c0;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          P[i * len + j] = dot * sc;
          mx = std::max(mx, P[i * len + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          P[i * len + j] = std::exp(P[i * len + j] - mx);
          z += P[i * len + j];
        }
        double* oi = out.data().data() + (s * len + i) * d + c0;
        for (std::size_t j = 0; j < len; ++j) {
          P[i * len + j] /= z;
          const double p = P[i * len + j];
          const double* vj = vd + (s * len + j) * d + c0;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  const Tensor* pq = &Q;
  const Tensor* pk = &K;
  const Tensor* pv = &V;
  return graph_of(q).make_node(
      std::move(out), {q, k, v},
      [=](const Tensor& g, std::span<Tensor* const> in) {
        std::vector<double> dP(len * len);
        const double* qd = pq->data().data();
        const double* kd = pk->data().data();
        const double* vd = pv->data().data();
        const double* gd = g.data().data();
        for (std::size_t s = 0; s < n_seq; ++s) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const double* P = probs->data() + (s * n_heads + h) * len * len;
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < len; ++i) {
              const double* gi = gd + (s * len + i) * d + c0;
              for (std::size_t j = 0; j < len; ++j) {
                const double* vj = vd + (s * len + j) * d + c0;
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += gi[c] * vj[c];
                dP[i * len + j] = dot;
                if (in[2]) {
                  double* dvj = in[2]->data().data() + (s * len + j) * d + c0;
                  const double p = P[i * len + j];
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * gi[c];
                }
              }
            }
            if (!in[0] && !in[1]) continue;
            for (std::size_t i = 0; i < len; ++i) {
              double row_dot = 0.0;
              for (std::size_t j = 0; j < len; ++j) row_dot += P[i * len + j] * dP[i * len + j];
              for (std::size_t j = 0; j < len; ++j) {
                const double ds = P[i * len + j] * (dP[i * len + j] - row_dot) * sc;
                if (in[0]) {
                  double* dqi = in[0]->data().data() + (s * len + i) * d + c0;
                  const double* kj = kd + (s * len + j) * d + c0;
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                }
                if (in[1]) {
                  double* dkj = in[1]->data().data() + (s * len + j) * d + c0;
                  const double* qi = qd + (s * len + i) * d + c0;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

// ---- gradient checking ----------------------------------------------------

GradCheckReport grad_check(const std::function<Var(Graph&)>& loss,
                           ParamStore& params, const GradCheckOptions& options) {
  params.zero_grad();
  {
    Graph g;
    Var l = loss(g);
    g.backward(l);
  }
  std::map<std::string, Tensor> analytic;
  for (auto& [name, p] : params) analytic[name] = p.grad;

  std::vector<std::pair<std::string, std::size_t>> coords;
  const std::size_t total = params.num_scalars();
  if (total <= options.n_coords) {
    for (auto& [name, p] : params)
      for (std::size_t i = 0; i < p.value.size(); ++i) coords.emplace_back(name, i);
  } else {
    Rng rng(options.seed);
    std::vector<std::pair<std::string, std::size_t>> flat_index;
    for (auto& [name, p] : params) {
      if (p.value.size() == 0) continue;
      coords.emplace_back(name, static_cast<std::size_t>(rng.uniform_int(
                                    0, static_cast<long long>(p.value.size()) - 1)));
    }
    while (coords.size() < options.n_coords) {
      auto r = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(total) - 1));
      for (auto& [name, p] : params) {
        if (r < p.value.size()) {
          coords.emplace_back(name, r);
          break;
        }
        r -= p.value.size();
      }
    }
  }

  auto eval = [&]() {
    Graph g;
    return loss(g).value()[0];
  };

  GradCheckReport report;
  std::vector<GradCheckEntry> entries;
  for (const auto& [name, idx] : coords) {
    double& w = params.at(name).value[idx];
    const double orig = w;
    w = orig + options.h;
    const double fp = eval();
    w = orig - options.h;
    const double fm = eval();
    w = orig;
    GradCheckEntry e;
    e.param = name;
    e.index = idx;
    e.analytic = analytic[name][idx];
    e.numeric = (fp - fm) / (2.0 * options.h);
    e.rel_error = std::abs(e.analytic - e.numeric) /
                  std::max({1.0, std::abs(e.analytic), std::abs(e.numeric)});
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    entries.push_back(std::move(e));
  }
  report.checked = entries.size();
  report.passed = report.max_rel_error < options.tol_rel;
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  if (entries.size() > 10) entries.resize(10);
  report.worst = std::move(entries);
  return report;
}

}  // namespace mp2m::ad
