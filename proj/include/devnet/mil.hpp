#pragma once

// Top-K multiple-instance aggregation, Z-score deviation, deviation loss and
// the focal-loss baseline head.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "devnet/autodiff.hpp"
#include "devnet/bag.hpp"
#include "devnet/errors.hpp"
#include "devnet/network.hpp"
#include "devnet/prior.hpp"
#include "devnet/tensor.hpp"

namespace devnet {

struct MilConfig {
  double k_fraction = 0.10;
  double margin = 5.0;  // a

  void validate() const {
    if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw ConfigError("k_fraction must lie in (0, 1]");
    if (!(margin > 0.0) || !std::isfinite(margin)) throw ConfigError("margin a must be positive");
  }
};

struct FocalConfig {
  double gamma = 2.0;
  double alpha = 0.5;
};

// K = max(1, ceil(k_fraction * n)). The 1e-9 slack keeps products such as
// 0.1 * 30 = 3.0000000000000004 from rounding up to the next integer.
inline std::size_t top_k_count(std::size_t n, double k_fraction) {
  if (n == 0) throw ContractError("top-K over an empty bag");
  const double raw = std::ceil(k_fraction * static_cast<double>(n) - 1e-9);
  const std::size_t k = raw < 1.0 ? 1 : static_cast<std::size_t>(raw);
  return k > n ? n : k;
}

struct TopK {
  double value = 0.0;                 // phi_K
  std::vector<std::size_t> selected;  // descending score, ties to lower index
};

inline TopK topk_score(std::span<const double> instance_scores, double k_fraction) {
  if (instance_scores.empty()) throw ContractError("topk_score on an empty score list");
  const std::size_t k = top_k_count(instance_scores.size(), k_fraction);
  TopK r;
  r.selected = top_k_indices(instance_scores, k);
  double s = 0.0;
  for (std::size_t i : r.selected) s += instance_scores[i];
  r.value = s / static_cast<double>(k);
  return r;
}

inline double deviation(double phi_k, const ReferenceStats& ref) {
  if (!(ref.sigma_r > 0.0)) throw ContractError("reference sigma must be positive");
  return (phi_k - ref.mu_r) / ref.sigma_r;
}

inline double deviation_loss(double dev, int y, double margin) {
  if (!(margin > 0.0)) throw ContractError("margin must be positive");
  if (y == 0) return std::fabs(dev);
  const double gap = margin - dev;
  return gap > 0.0 ? gap : 0.0;
}

inline double focal_loss(double score, int y, double gamma = 2.0, double alpha = 0.5) {
  if (!(gamma >= 0.0)) throw ContractError("focal gamma must be >= 0");
  return Tape::focal_terms(score, y, gamma, alpha).loss;
}

// phi_K of a whole bag under the current parameters.
inline TopK score_bag(const Bag& bag, const NetworkParams& params, double k_fraction) {
  const std::vector<double> scores = score_instances(bag.instances, params);
  return topk_score(scores, k_fraction);
}

struct LossValue {
  double value = 0.0;
  std::vector<double> deviations;
};

// Per-bag taped loss terms. `instance_scores` is an (n x 1) score column.
inline Var taped_phi_k(Tape& tape, Var instance_scores, double k_fraction) {
  const std::size_t n = tape.value(instance_scores).size();
  return tape.top_k_mean(instance_scores, top_k_count(n, k_fraction));
}

inline Var taped_deviation(Tape& tape, Var phi_k, const ReferenceStats& ref) {
  return tape.affine(phi_k, 1.0 / ref.sigma_r, -ref.mu_r / ref.sigma_r);
}

inline Var taped_deviation_loss(Tape& tape, Var dev, int y, double margin) {
  if (y == 0) return tape.abs(dev);
  return tape.hinge(tape.affine(dev, -1.0, margin));
}

}  // namespace devnet
