#pragma once

// Gaussian prior reference scores: l draws from N(mu, sigma^2), summarized
// by their mean and population standard deviation.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "devnet/errors.hpp"

namespace devnet {

struct PriorConfig {
  double mu = 0.0;
  double sigma = 1.0;
  std::size_t l = 5000;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("prior sigma must be positive");
    if (!std::isfinite(mu)) throw ConfigError("prior mu must be finite");
    if (l < 2) throw ConfigError("prior sample count l must be >= 2");
  }
};

struct ReferenceStats {
  double mu_r = 0.0;
  double sigma_r = 1.0;
  std::size_t l = 0;
};

inline constexpr double kSigmaFloor = 1e-6;

template <typename Rng>
std::vector<double> sample_reference_scores(const PriorConfig& cfg, Rng& rng) {
  cfg.validate();
  std::normal_distribution<double> dist(cfg.mu, cfg.sigma);
  std::vector<double> r(cfg.l);
  for (double& v : r) v = dist(rng);
  return r;
}

inline ReferenceStats reference_stats(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw ContractError("reference statistics need at least 2 scores, got " + std::to_string(scores.size()));
  }
  const double n = static_cast<double>(scores.size());
  double sum = 0.0;
  for (double v : scores) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : scores) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  return {mean, sd > kSigmaFloor ? sd : kSigmaFloor, scores.size()};
}

// The reference the prior converges to as l grows; used when scoring test
// data so that deviations do not depend on a random draw.
inline ReferenceStats expected_reference(const PriorConfig& cfg) {
  cfg.validate();
  return {cfg.mu, cfg.sigma, cfg.l};
}

template <typename Rng>
ReferenceStats draw_reference(const PriorConfig& cfg, Rng& rng) {
  const std::vector<double> r = sample_reference_scores(cfg, rng);
  return reference_stats(r);
}

}  // namespace devnet
