#pragma once

// Training loop: stratified half-anomaly mini-batches, a fresh prior draw per
// batch, mean per-sample loss, and Adam with decoupled weight decay.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "devnet/autodiff.hpp"
#include "devnet/bag.hpp"
#include "devnet/errors.hpp"
#include "devnet/evaluator.hpp"
#include "devnet/mil.hpp"
#include "devnet/network.hpp"
#include "devnet/prior.hpp"

namespace devnet {

enum class LossKind { deviation, focal };

inline const char* to_string(LossKind k) { return k == LossKind::deviation ? "deviation" : "focal"; }

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t iters_per_epoch = 20;
  std::size_t batch_size = 48;
  std::vector<std::size_t> hidden = {64, 32};  // psi widths after the input; last is L
  AdamConfig optimizer;
  MilConfig mil;
  PriorConfig prior;
  LossKind loss = LossKind::deviation;
  FocalConfig focal;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch size must be even and >= 2");
    if (hidden.empty()) throw ConfigError("need at least one feature layer");
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (!(optimizer.beta1 > 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 > 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("moment decays must lie in (0, 1)");
    }
    if (!(optimizer.eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(focal.gamma >= 0.0) || !(focal.alpha >= 0.0 && focal.alpha <= 1.0)) {
      throw ConfigError("focal gamma must be >= 0 and alpha in [0, 1]");
    }
    mil.validate();
    prior.validate();
  }

  std::vector<std::size_t> arch(std::size_t input_dim) const {
    std::vector<std::size_t> a{input_dim};
    a.insert(a.end(), hidden.begin(), hidden.end());
    return a;
  }
};

struct TrainHistory {
  std::vector<double> iteration_loss;  // epochs * iters_per_epoch entries
  std::vector<double> epoch_loss;      // mean of each epoch's iteration losses
  std::vector<double> epoch_auc;       // empty unless a validation set was given
};

struct TrainResult {
  NetworkParams params;
  TrainHistory history;
};

// Loss went non-finite. Carries the parameters from before the bad step.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, NetworkParams last_good, std::size_t iteration)
      : NumericError(what), last_good_(std::move(last_good)), iteration_(iteration) {}

  const NetworkParams& last_good() const noexcept { return last_good_; }
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  NetworkParams last_good_;
  std::size_t iteration_;
};

// b/2 anomalies then b/2 normals, each drawn uniformly with replacement.
template <typename Rng>
std::vector<const Bag*> stratified_batch(const std::vector<Bag>& normals, const std::vector<Bag>& anomalies,
                                         std::size_t batch_size, Rng& rng) {
  if (anomalies.empty()) {
    throw ConfigError("no labeled anomalies: training needs at least one labeled anomaly (X_a)");
  }
  if (normals.empty()) throw ConfigError("no normal training data (X_n)");
  if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("batch size must be even and >= 2");
  std::uniform_int_distribution<std::size_t> pick_a(0, anomalies.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_n(0, normals.size() - 1);
  std::vector<const Bag*> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size / 2; ++i) batch.push_back(&anomalies[pick_a(rng)]);
  for (std::size_t i = 0; i < batch_size / 2; ++i) batch.push_back(&normals[pick_n(rng)]);
  return batch;
}

struct AdamState {
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::size_t step = 0;
};

inline AdamState make_adam_state(const NetworkParams& params) {
  AdamState s{params, params, 0};
  NetworkParams::for_each_block(s.first_moment, [](const std::string&, Tensor& t) {
    for (double& v : t.storage()) v = 0.0;
  });
  s.second_moment = s.first_moment;
  return s;
}

// theta <- theta * (1 - lr * wd), then the bias-corrected adaptive step.
inline void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state, const AdamConfig& cfg) {
  std::vector<Tensor*> p, m, v;
  std::vector<const Tensor*> g;
  std::vector<std::string> names;
  NetworkParams::for_each_block(params, [&](const std::string& name, Tensor& t) {
    p.push_back(&t);
    names.push_back(name);
  });
  NetworkParams::for_each_block(grads, [&](const std::string&, const Tensor& t) { g.push_back(&t); });
  NetworkParams::for_each_block(state.first_moment, [&](const std::string&, Tensor& t) { m.push_back(&t); });
  NetworkParams::for_each_block(state.second_moment, [&](const std::string&, Tensor& t) { v.push_back(&t); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw DimensionError("optimizer state does not match parameter layout");
  }
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (g[b]->shape() != p[b]->shape() || m[b]->shape() != p[b]->shape()) {
      throw DimensionError("gradient shape mismatch in " + names[b]);
    }
    if (!g[b]->all_finite()) throw NumericError("non-finite gradient in parameter block " + names[b]);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t b = 0; b < p.size(); ++b) {
    Tensor& w = *p[b];
    const Tensor& grad = *g[b];
    Tensor& m1 = *m[b];
    Tensor& m2 = *v[b];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      w[i] *= decay;
      w[i] -= cfg.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.eps);
    }
  }
}

struct BatchLoss {
  double value = 0.0;
  std::vector<double> deviations;  // dev per sample (deviation loss only)
  NetworkParams gradients;
};

// (1/b) sum of per-sample losses and its parameter gradient.
inline BatchLoss batch_loss(const std::vector<const Bag*>& batch, const NetworkParams& params,
                            const ReferenceStats& ref, const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("empty batch");
  Tape tape;
  const ParamVars pv = bind_params(tape, params, true);
  std::vector<Var> terms;
  terms.reserve(batch.size());
  BatchLoss out;
  for (const Bag* bag : batch) {
    const Var x = tape.leaf(bag->instances, false);
    const Var phi = taped_phi_k(tape, forward_scores(tape, pv, x), cfg.mil.k_fraction);
    if (cfg.loss == LossKind::deviation) {
      const Var dev = taped_deviation(tape, phi, ref);
      out.deviations.push_back(tape.value(dev).item());
      terms.push_back(taped_deviation_loss(tape, dev, bag->label, cfg.mil.margin));
    } else {
      terms.push_back(tape.focal(phi, bag->label, cfg.focal.gamma, cfg.focal.alpha));
    }
  }
  const Var total = tape.affine(tape.sum(terms), 1.0 / static_cast<double>(batch.size()), 0.0);
  out.value = tape.value(total).item();
  out.gradients = collect_gradients(tape.backward(total), pv);
  return out;
}

// phi_K for each bag.
inline std::vector<double> score_bags(const std::vector<Bag>& bags, const NetworkParams& params,
                                      double k_fraction) {
  std::vector<double> s;
  s.reserve(bags.size());
  for (const Bag& b : bags) s.push_back(score_bag(b, params, k_fraction).value);
  return s;
}

inline std::vector<int> labels_of(const std::vector<Bag>& bags) {
  std::vector<int> y;
  y.reserve(bags.size());
  for (const Bag& b : bags) y.push_back(b.label);
  return y;
}

namespace detail {

inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace detail

// Runs the full schedule. `validation`, when it holds both classes, is
// scored after every epoch and its AUC recorded in the history.
inline TrainResult train(const std::vector<Bag>& normals, const std::vector<Bag>& anomalies,
                         const TrainConfig& cfg, const std::vector<Bag>& validation = {}) {
  cfg.validate();
  if (anomalies.empty()) {
    throw ConfigError("no labeled anomalies: training needs at least one labeled anomaly (X_a)");
  }
  if (normals.empty()) throw ConfigError("no normal training data (X_n)");
  const std::size_t dim = normals.front().dim();
  validate_bags(normals, dim);
  validate_bags(anomalies, dim);
  if (!validation.empty()) validate_bags(validation, dim);

  TrainResult result;
  const std::vector<std::size_t> arch = cfg.arch(dim);
  result.params = init_params(arch, cfg.seed);
  AdamState adam = make_adam_state(result.params);
  std::mt19937_64 batch_rng = detail::derived_rng(cfg.seed, 1);
  std::mt19937_64 prior_rng = detail::derived_rng(cfg.seed, 2);

  bool track_auc = false;
  if (!validation.empty()) {
    bool pos = false, neg = false;
    for (const Bag& b : validation) (b.label ? pos : neg) = true;
    track_auc = pos && neg;
  }
  const std::vector<int> val_labels = track_auc ? labels_of(validation) : std::vector<int>{};

  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (std::size_t it = 0; it < cfg.iters_per_epoch; ++it, ++iteration) {
      const auto batch = stratified_batch(normals, anomalies, cfg.batch_size, batch_rng);
      const ReferenceStats ref = draw_reference(cfg.prior, prior_rng);
      BatchLoss loss = batch_loss(batch, result.params, ref, cfg);
      if (!std::isfinite(loss.value)) {
        throw DivergenceError("training loss became non-finite at iteration " + std::to_string(iteration),
                              result.params, iteration);
      }
      NetworkParams next = result.params;
      adam_step(next, loss.gradients, adam, cfg.optimizer);
      if (!next.all_finite()) {
        throw DivergenceError("parameters became non-finite at iteration " + std::to_string(iteration),
                              result.params, iteration);
      }
      result.params = std::move(next);
      result.history.iteration_loss.push_back(loss.value);
      epoch_sum += loss.value;
    }
    if (cfg.iters_per_epoch > 0) {
      result.history.epoch_loss.push_back(epoch_sum / static_cast<double>(cfg.iters_per_epoch));
    }
    if (track_auc) {
      result.history.epoch_auc.push_back(auc_roc(score_bags(validation, result.params, cfg.mil.k_fraction), val_labels));
    }
  }
  return result;
}

}  // namespace devnet
