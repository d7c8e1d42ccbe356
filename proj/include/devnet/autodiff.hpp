#pragma once

// Minimal reverse-mode differentiation over dense tensors.
//
// A Tape records every operation in creation order, which is also a valid
// topological order since an op can only reference nodes that already
// exist. backward() walks the record in reverse, accumulates adjoints and
// then releases the tape. Only the handful of ops an MLP scorer with a
// top-K pooled deviation or focal loss needs are provided.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "devnet/errors.hpp"
#include "devnet/tensor.hpp"

namespace devnet {

// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

// Leaf adjoints produced by Tape::backward.
class Gradients {
 public:
  const Tensor& operator[](Var v) const {
    auto it = grads_.find(v.id);
    if (it == grads_.end()) {
      throw ContractError("no gradient recorded for node " + std::to_string(v.id) +
                          " (not a leaf requiring grad)");
    }
    return it->second;
  }

  bool contains(Var v) const { return grads_.count(v.id) != 0; }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

class Tape {
 public:
  enum class Op { leaf, matmul, add_bias, relu, mean, top_k_mean, affine, add, abs, hinge, sum, focal };

  Var leaf(Tensor value, bool requires_grad = true) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return node(v).value; }

  // (m x k) * (k x n). Each output entry accumulates products in increasing
  // k order starting from 0.0; the plain scoring path uses the same order,
  // so taped and untaped scores agree bit for bit.
  Var matmul(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
      throw DimensionError("matmul of " + A.shape_string() + " by " + B.shape_string());
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[p * n + j];
        out[i * n + j] = s;
      }
    }
    return push_op(Op::matmul, std::move(out), a, b);
  }

  // Adds a length-n bias to every row of an (m x n) matrix.
  Var add_bias(Var x, Var bias) {
    const Tensor& X = node(x).value;
    const Tensor& b = node(bias).value;
    if (X.rank() != 2 || b.size() != X.cols()) {
      throw DimensionError("bias of " + b.shape_string() + " for input " + X.shape_string());
    }
    Tensor out = X;
    const std::size_t n = X.cols();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
    return push_op(Op::add_bias, std::move(out), x, bias);
  }

  // Subgradient at exactly 0 is 0.
  Var relu(Var x) {
    Tensor out = node(x).value;
    for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
    return push_op(Op::relu, std::move(out), x);
  }

  Var mean(Var x) {
    const Tensor& X = node(x).value;
    double s = 0.0;
    for (double v : X.data()) s += v;
    return push_op(Op::mean, Tensor::scalar(s / static_cast<double>(X.size())), x);
  }

  // Mean of the k largest entries. The selected indices are kept on the
  // node; gradient flows only to them, 1/k each.
  Var top_k_mean(Var x, std::size_t k) {
    const Tensor& X = node(x).value;
    std::vector<std::size_t> picked = top_k_indices(X.data(), k);
    double s = 0.0;
    for (std::size_t i : picked) s += X[i];
    Var out = push_op(Op::top_k_mean, Tensor::scalar(s / static_cast<double>(k)), x);
    nodes_[out.id].selected = std::move(picked);
    return out;
  }

  const std::vector<std::size_t>& selected(Var top_k_node) const {
    const Node& n = node(top_k_node);
    if (n.op != Op::top_k_mean) throw ContractError("selected() on a node that is not a top-K mean");
    return n.selected;
  }

  // Elementwise scale * x + shift.
  Var affine(Var x, double scale, double shift) {
    Tensor out = node(x).value;
    for (double& v : out.storage()) v = scale * v + shift;
    Var r = push_op(Op::affine, std::move(out), x);
    nodes_[r.id].scale = scale;
    return r;
  }

  Var add(Var a, Var b) {
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (A.shape() != B.shape()) {
      throw DimensionError("add of " + A.shape_string() + " and " + B.shape_string());
    }
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return push_op(Op::add, std::move(out), a, b);
  }

  Var abs(Var x) {
    Tensor out = node(x).value;
    for (double& v : out.storage()) v = std::fabs(v);
    return push_op(Op::abs, std::move(out), x);
  }

  // max(0, x), subgradient 0 at the kink.
  Var hinge(Var x) {
    Tensor out = node(x).value;
    for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
    return push_op(Op::hinge, std::move(out), x);
  }

  // Sum of scalar nodes, reduced in the given order.
  Var sum(std::span<const Var> terms) {
    if (terms.empty()) throw ContractError("sum over no terms");
    double s = 0.0;
    for (Var t : terms) s += node(t).value.item();
    Node n;
    n.op = Op::sum;
    n.value = Tensor::scalar(s);
    for (Var t : terms) n.parents.push_back(t.id);
    return push(std::move(n));
  }

  // Focal loss -alpha_t (1 - p_t)^gamma log(p_t) on p = sigmoid(x) for a
  // scalar logit x. Fused so the derivative is evaluated in closed form.
  Var focal(Var x, int label, double gamma, double alpha) {
    const double logit = node(x).value.item();
    const FocalTerms t = focal_terms(logit, label, gamma, alpha);
    Var r = push_op(Op::focal, Tensor::scalar(t.loss), x);
    nodes_[r.id].scale = t.dloss;
    return r;
  }

  // Reverse sweep from a scalar output. Returns gradients of every leaf that
  // requires grad, then releases the tape.
  Gradients backward(Var output) {
    const Node& out = node(output);
    if (out.value.size() != 1) {
      throw ContractError("backward needs a scalar output, got shape " + out.value.shape_string());
    }
    std::vector<std::optional<Tensor>> adj(nodes_.size());
    adj[output.id] = Tensor(out.value.shape(), 1.0);

    for (std::size_t idx = output.id + 1; idx-- > 0;) {
      if (!adj[idx]) continue;
      const Node& n = nodes_[idx];
      const Tensor& g = *adj[idx];
      switch (n.op) {
        case Op::leaf:
          break;
        case Op::matmul: {
          const Tensor& A = nodes_[n.parents[0]].value;
          const Tensor& B = nodes_[n.parents[1]].value;
          const std::size_t m = A.rows(), k = A.cols(), c = B.cols();
          Tensor dA({m, k});
          Tensor dB({k, c});
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              const double a = A[i * k + p];
              for (std::size_t j = 0; j < c; ++j) {
                s += g[i * c + j] * B[p * c + j];
                dB[p * c + j] += a * g[i * c + j];
              }
              dA[i * k + p] = s;
            }
          }
          accumulate(adj, n.parents[0], dA);
          accumulate(adj, n.parents[1], dB);
          break;
        }
        case Op::add_bias: {
          const std::size_t cols = n.value.cols();
          Tensor db(nodes_[n.parents[1]].value.shape());
          for (std::size_t i = 0; i < g.size(); ++i) db[i % cols] += g[i];
          accumulate(adj, n.parents[0], g);
          accumulate(adj, n.parents[1], db);
          break;
        }
        case Op::relu:
        case Op::hinge: {
          const Tensor& X = nodes_[n.parents[0]].value;
          Tensor dx(X.shape());
          for (std::size_t i = 0; i < X.size(); ++i) dx[i] = X[i] > 0.0 ? g[i] : 0.0;
          accumulate(adj, n.parents[0], dx);
          break;
        }
        case Op::mean: {
          const Tensor& X = nodes_[n.parents[0]].value;
          accumulate(adj, n.parents[0], Tensor(X.shape(), g[0] / static_cast<double>(X.size())));
          break;
        }
        case Op::top_k_mean: {
          const Tensor& X = nodes_[n.parents[0]].value;
          Tensor dx(X.shape());
          const double share = g[0] / static_cast<double>(n.selected.size());
          for (std::size_t i : n.selected) dx[i] = share;
          accumulate(adj, n.parents[0], dx);
          break;
        }
        case Op::affine: {
          Tensor dx = g;
          for (double& v : dx.storage()) v *= n.scale;
          accumulate(adj, n.parents[0], dx);
          break;
        }
        case Op::add:
          accumulate(adj, n.parents[0], g);
          accumulate(adj, n.parents[1], g);
          break;
        case Op::abs: {
          const Tensor& X = nodes_[n.parents[0]].value;
          Tensor dx(X.shape());
          for (std::size_t i = 0; i < X.size(); ++i) {
            dx[i] = X[i] > 0.0 ? g[i] : (X[i] < 0.0 ? -g[i] : 0.0);
          }
          accumulate(adj, n.parents[0], dx);
          break;
        }
        case Op::sum:
          for (std::size_t p : n.parents) accumulate(adj, p, g);
          break;
        case Op::focal:
          accumulate(adj, n.parents[0], Tensor::scalar(g[0] * n.scale));
          break;
      }
    }

    Gradients result;
    for (std::size_t idx = 0; idx < nodes_.size(); ++idx) {
      const Node& n = nodes_[idx];
      if (n.op != Op::leaf || !n.requires_grad) continue;
      result.grads_.emplace(idx, adj[idx] ? std::move(*adj[idx]) : Tensor(n.value.shape()));
    }
    nodes_.clear();
    return result;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  struct FocalTerms {
    double loss;
    double dloss;  // derivative with respect to the logit
  };

  static FocalTerms focal_terms(double logit, int label, double gamma, double alpha) {
    // p_t = sigmoid(+-logit), u = 1 - p_t = sigmoid(-+logit).
    const double z = label == 1 ? logit : -logit;
    const double p_t = stable_sigmoid(z);
    const double u = stable_sigmoid(-z);
    const double alpha_t = label == 1 ? alpha : 1.0 - alpha;
    const double log_p = std::log(std::max(p_t, 1e-12));
    const double u_gamma = gamma == 0.0 ? 1.0 : std::pow(u, gamma);
    const double loss = -alpha_t * u_gamma * log_p;
    const double dz = alpha_t * u_gamma * (gamma * p_t * log_p - u);
    return {loss, label == 1 ? dz : -dz};
  }

 private:
  struct Node {
    Op op = Op::leaf;
    Tensor value;
    std::vector<std::size_t> parents;
    std::vector<std::size_t> selected;
    double scale = 1.0;
    bool requires_grad = false;
  };

  static double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) {
      throw ContractError("node " + std::to_string(v.id) + " is not on this tape");
    }
    return nodes_[v.id];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_op(Op op, Tensor value, Var a) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.parents = {a.id};
    return push(std::move(n));
  }

  Var push_op(Op op, Tensor value, Var a, Var b) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.parents = {a.id, b.id};
    return push(std::move(n));
  }

  static void accumulate(std::vector<std::optional<Tensor>>& adj, std::size_t id, const Tensor& g) {
    if (!adj[id]) {
      adj[id] = g;
      return;
    }
    Tensor& t = *adj[id];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += g[i];
  }

  std::vector<Node> nodes_;
};

// A differentiable scalar function of one tensor, expressed on a tape.
using TapeFunction = std::function<Var(Tape&, Var)>;

// Compares the tape gradient of `fn` at `point` with central differences of
// step `step`. Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
inline double grad_check(const TapeFunction& fn, const Tensor& point, double step) {
  if (!(step > 0.0)) throw ContractError("grad_check step must be positive");

  auto evaluate = [&](const Tensor& x) {
    Tape tape;
    Var in = tape.leaf(x, false);
    const double v = tape.value(fn(tape, in)).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };

  Tape tape;
  Var in = tape.leaf(point, true);
  Var out = fn(tape, in);
  if (!tape.value(out).all_finite()) throw NumericError("grad_check: non-finite function value");
  const Tensor analytic = tape.backward(out)[in];

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double up = evaluate(probe);
    probe[i] = point[i] - step;
    const double down = evaluate(probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * step);
    if (!std::isfinite(analytic[i])) throw NumericError("grad_check: non-finite analytic gradient");
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i])));
  }
  return worst;
}

}  // namespace devnet
