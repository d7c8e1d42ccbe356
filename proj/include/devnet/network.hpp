#pragma once

// Anomaly scoring network: a feature learner (MLP, ReLU between layers,
// linear final representation) followed by one linear scoring unit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "devnet/autodiff.hpp"
#include "devnet/errors.hpp"
#include "devnet/tensor.hpp"

namespace devnet {

struct DenseLayer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out

  std::size_t fan_in() const { return weight.rows(); }
  std::size_t fan_out() const { return weight.cols(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct NetworkParams {
  std::vector<DenseLayer> feature_layers;  // theta_t
  DenseLayer scorer;                       // theta_s: L x 1 weights + scalar bias

  std::size_t input_dim() const { return feature_layers.front().fan_in(); }
  std::size_t representation_dim() const { return feature_layers.back().fan_out(); }

  // [D, hidden..., L]
  std::vector<std::size_t> arch() const {
    std::vector<std::size_t> a{input_dim()};
    for (const auto& l : feature_layers) a.push_back(l.fan_out());
    return a;
  }

  // Visits every parameter block in a fixed order with a stable name.
  template <typename Self, typename Fn>
  static void for_each_block(Self& self, Fn&& fn) {
    for (std::size_t i = 0; i < self.feature_layers.size(); ++i) {
      fn("layer" + std::to_string(i) + ".weight", self.feature_layers[i].weight);
      fn("layer" + std::to_string(i) + ".bias", self.feature_layers[i].bias);
    }
    fn(std::string("scorer.weight"), self.scorer.weight);
    fn(std::string("scorer.bias"), self.scorer.bias);
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block(*this, [&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
    return ok;
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

inline void validate_arch(std::span<const std::size_t> arch) {
  if (arch.size() < 2) {
    throw ConfigError("architecture needs an input width and at least one representation layer");
  }
  for (std::size_t i = 0; i < arch.size(); ++i) {
    if (arch[i] == 0) throw ConfigError("layer width " + std::to_string(i) + " must be >= 1");
  }
}

// Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases 0.
inline NetworkParams init_params(std::span<const std::size_t> arch, std::uint64_t seed) {
  validate_arch(arch);
  std::mt19937_64 rng(seed);
  auto make_layer = [&](std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Tensor({fan_in, fan_out}), Tensor({fan_out})};
    for (double& w : layer.weight.storage()) w = dist(rng);
    return layer;
  };
  NetworkParams p;
  for (std::size_t i = 0; i + 1 < arch.size(); ++i) p.feature_layers.push_back(make_layer(arch[i], arch[i + 1]));
  p.scorer = make_layer(arch.back(), 1);
  return p;
}

inline NetworkParams init_params(std::initializer_list<std::size_t> arch, std::uint64_t seed) {
  return init_params(std::span<const std::size_t>(arch.begin(), arch.size()), seed);
}

// q = psi(x; theta_t)
inline std::vector<double> embed(std::span<const double> instance, const NetworkParams& params) {
  if (instance.size() != params.input_dim()) {
    throw DimensionError("instance has " + std::to_string(instance.size()) + " features, expected D = " +
                         std::to_string(params.input_dim()));
  }
  std::vector<double> x(instance.begin(), instance.end());
  const std::size_t last = params.feature_layers.size() - 1;
  for (std::size_t li = 0; li <= last; ++li) {
    const DenseLayer& layer = params.feature_layers[li];
    const std::size_t n = layer.fan_out();
    std::vector<double> y(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < x.size(); ++p) s += x[p] * layer.weight[p * n + j];
      s += layer.bias[j];
      y[j] = (li == last || s > 0.0) ? s : 0.0;
    }
    x = std::move(y);
  }
  return x;
}

// eta(q; theta_s) = sum_k w_k q_k + w_{L+1}
inline double score_instance(std::span<const double> q, const NetworkParams& params) {
  if (q.size() != params.representation_dim()) {
    throw DimensionError("representation has " + std::to_string(q.size()) + " entries, expected L = " +
                         std::to_string(params.representation_dim()));
  }
  double s = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) s += q[k] * params.scorer.weight[k];
  return s + params.scorer.bias[0];
}

// Scores of every instance of an (n x D) instance matrix, order preserved.
inline std::vector<double> score_instances(const Tensor& instances, const NetworkParams& params) {
  if (instances.empty()) throw ContractError("cannot score an empty bag");
  std::vector<double> scores(instances.rows());
  for (std::size_t j = 0; j < instances.rows(); ++j) {
    scores[j] = score_instance(embed(instances.row(j), params), params);
  }
  return scores;
}

// Parameters registered as tape leaves.
struct ParamVars {
  std::vector<std::pair<Var, Var>> feature;  // (weight, bias)
  Var score_weight;
  Var score_bias;
};

inline ParamVars bind_params(Tape& tape, const NetworkParams& params, bool requires_grad = true) {
  ParamVars v;
  for (const auto& l : params.feature_layers) {
    v.feature.emplace_back(tape.leaf(l.weight, requires_grad), tape.leaf(l.bias, requires_grad));
  }
  v.score_weight = tape.leaf(params.scorer.weight, requires_grad);
  v.score_bias = tape.leaf(params.scorer.bias, requires_grad);
  return v;
}

// Taped forward pass of an (n x D) instance matrix to an (n x 1) score column.
inline Var forward_scores(Tape& tape, const ParamVars& pv, Var instances) {
  Var h = instances;
  for (std::size_t i = 0; i < pv.feature.size(); ++i) {
    const Tensor& x = tape.value(h);
    const Tensor& w = tape.value(pv.feature[i].first);
    if (x.rank() != 2 || x.cols() != w.rows()) {
      throw DimensionError("layer " + std::to_string(i) + " expects fan-in " + std::to_string(w.rows()) +
                           ", got input of shape " + x.shape_string());
    }
    h = tape.add_bias(tape.matmul(h, pv.feature[i].first), pv.feature[i].second);
    if (i + 1 < pv.feature.size()) h = tape.relu(h);
  }
  return tape.add_bias(tape.matmul(h, pv.score_weight), pv.score_bias);
}

struct ForwardPass {
  Tape tape;
  ParamVars params;
  Var input;
  Var output;  // (n x 1) instance scores
};

inline ForwardPass forward(const NetworkParams& params, const Tensor& instances) {
  ForwardPass f;
  f.params = bind_params(f.tape, params);
  f.input = f.tape.leaf(instances, true);
  f.output = forward_scores(f.tape, f.params, f.input);
  return f;
}

// Collects parameter gradients into a NetworkParams-shaped container.
inline NetworkParams collect_gradients(const Gradients& g, const ParamVars& pv) {
  NetworkParams out;
  for (const auto& [w, b] : pv.feature) out.feature_layers.push_back({g[w], g[b]});
  out.scorer = {g[pv.score_weight], g[pv.score_bias]};
  return out;
}

}  // namespace devnet
