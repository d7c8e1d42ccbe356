#pragma once

// Detection metrics, score interpretability under the Gaussian prior, and a
// Monte-Carlo estimate of open-space risk.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "devnet/errors.hpp"
#include "devnet/prior.hpp"

namespace devnet {

namespace detail {

inline void require_both_classes(std::span<const int> labels, const char* metric) {
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y == 1) pos = true;
    else if (y == 0) neg = true;
    else throw ContractError(std::string(metric) + ": labels must be 0 or 1");
  }
  if (!pos || !neg) throw ContractError(std::string(metric) + " is undefined unless both classes are present");
}

}  // namespace detail

// Mann-Whitney AUC with midranks: P(s_pos > s_neg) + 0.5 P(s_pos == s_neg).
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc_roc: scores and labels differ in length");
  detail::require_both_classes(labels, "AUC-ROC");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos);
  const double q = static_cast<double>(n - n_pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

struct F1Point {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Thresholds spaced uniformly over [min score, max score]; a sample is
// predicted anomalous when its score >= threshold. Collapses to a single
// point when all scores are equal.
inline std::vector<F1Point> f1_sweep(std::span<const double> scores, std::span<const int> labels,
                                     std::size_t n_thresholds = 201) {
  if (scores.size() != labels.size()) throw DimensionError("f1_sweep: scores and labels differ in length");
  detail::require_both_classes(labels, "F1 sweep");
  if (n_thresholds < 2) throw ContractError("f1_sweep needs at least 2 thresholds");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const std::size_t steps = *lo == *hi ? 1 : n_thresholds;
  std::vector<F1Point> curve;
  curve.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = i + 1 == steps && steps > 1
                         ? *hi
                         : *lo + (*hi - *lo) * static_cast<double>(i) / static_cast<double>(n_thresholds - 1);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const bool predicted = scores[k] >= t;
      if (predicted && labels[k] == 1) ++tp;
      else if (predicted) ++fp;
      else if (labels[k] == 1) ++fn;
    }
    F1Point pt{t, 0.0, 0.0, 0.0};
    if (tp + fp > 0) pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    pt.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (pt.precision + pt.recall > 0.0) pt.f1 = 2.0 * pt.precision * pt.recall / (pt.precision + pt.recall);
    curve.push_back(pt);
  }
  return curve;
}

inline double max_f1(const std::vector<F1Point>& curve) {
  double best = 0.0;
  for (const auto& p : curve) best = std::max(best, p.f1);
  return best;
}

// Standard normal CDF. erfc keeps full relative precision in the tails.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Probability that a draw from the prior lands at least as far from mu as
// `score`: 2 (1 - Phi(|score - mu| / sigma)).
inline double score_to_probability(double score, const PriorConfig& prior = {}) {
  if (!(prior.sigma > 0.0)) throw ContractError("prior sigma must be positive");
  const double z = std::fabs(score - prior.mu) / prior.sigma;
  return std::erfc(z / std::numbers::sqrt2);
}

// Two-sided 95% critical value used as the default normal/anomalous cut.
inline constexpr double kZ95 = 1.959963984540054;

// ---------------------------------------------------------------------------
// Open-space risk

struct Box {
  std::vector<double> lower;
  std::vector<double> upper;

  bool contains(std::span<const double> x) const {
    for (std::size_t d = 0; d < lower.size(); ++d) {
      if (x[d] < lower[d] || x[d] > upper[d]) return false;
    }
    return true;
  }
};

// Axis-aligned bounding box of `points`, padded by `margin` on every side.
inline Box bounding_box(const std::vector<std::vector<double>>& points, double margin) {
  if (points.empty()) throw ContractError("bounding box of no points");
  Box b{points.front(), points.front()};
  for (const auto& p : points) {
    for (std::size_t d = 0; d < p.size(); ++d) {
      b.lower[d] = std::min(b.lower[d], p[d]);
      b.upper[d] = std::max(b.upper[d], p[d]);
    }
  }
  for (auto& v : b.lower) v -= margin;
  for (auto& v : b.upper) v += margin;
  return b;
}

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

// 95th percentile (nearest rank) of nearest-neighbour distances within the
// training normals.
inline double open_space_radius(const std::vector<std::vector<double>>& normals, double quantile = 0.95) {
  if (normals.size() < 2) throw ContractError("open-space radius needs at least 2 training normals");
  std::vector<double> nn(normals.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < normals.size(); ++i) {
    for (std::size_t j = i + 1; j < normals.size(); ++j) {
      const double d = detail::squared_distance(normals[i], normals[j]);
      nn[i] = std::min(nn[i], d);
      nn[j] = std::min(nn[j], d);
    }
  }
  std::sort(nn.begin(), nn.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(nn.size())));
  return std::sqrt(nn[std::clamp<std::size_t>(rank, 1, nn.size()) - 1]);
}

struct RiskEstimate {
  double risk = 0.0;
  Box region;
  std::size_t n_samples = 0;
  double threshold = kZ95;
  double radius = 0.0;
  double normal_fraction = 0.0;       // share of the region classified normal
  double open_normal_fraction = 0.0;  // share classified normal and in open space
  double standard_error = 0.0;
};

// Monte-Carlo estimate of (open space classified normal) / (region classified
// normal). `dev_of` maps a point to its deviation; a point is classified
// normal when dev < threshold. Open space = region points farther than
// `radius` from every training normal.
template <typename DevFn, typename Rng>
RiskEstimate estimate_open_space_risk(DevFn&& dev_of, const std::vector<std::vector<double>>& train_normals,
                                      const Box& region, double threshold, std::size_t n_samples, double radius,
                                      Rng& rng) {
  if (n_samples < 1000) throw ContractError("open-space risk needs at least 1000 samples");
  if (train_normals.empty()) throw ContractError("open-space risk needs training normals");
  const std::size_t dim = region.lower.size();
  if (region.upper.size() != dim) throw DimensionError("region bounds differ in dimension");
  for (const auto& x : train_normals) {
    if (x.size() != dim) throw DimensionError("training normal dimension does not match the region");
    if (!region.contains(x)) throw ContractError("region does not contain every training normal");
  }

  std::vector<std::uniform_real_distribution<double>> axes;
  for (std::size_t d = 0; d < dim; ++d) axes.emplace_back(region.lower[d], region.upper[d]);

  const double r2 = radius * radius;
  std::size_t n_normal = 0, n_open_normal = 0;
  std::vector<double> x(dim);
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t d = 0; d < dim; ++d) x[d] = axes[d](rng);
    if (!(dev_of(std::span<const double>(x)) < threshold)) continue;
    ++n_normal;
    bool open = true;
    for (const auto& t : train_normals) {
      if (detail::squared_distance(x, t) <= r2) {
        open = false;
        break;
      }
    }
    n_open_normal += open;
  }

  RiskEstimate est;
  est.region = region;
  est.n_samples = n_samples;
  est.threshold = threshold;
  est.radius = radius;
  est.normal_fraction = static_cast<double>(n_normal) / static_cast<double>(n_samples);
  est.open_normal_fraction = static_cast<double>(n_open_normal) / static_cast<double>(n_samples);
  if (n_normal > 0) {
    est.risk = static_cast<double>(n_open_normal) / static_cast<double>(n_normal);
    est.standard_error = std::sqrt(est.risk * (1.0 - est.risk) / static_cast<double>(n_normal));
  }
  return est;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  double auc_roc = 0.0;
  std::vector<F1Point> f1_curve;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::optional<double> pixel_auc;
  std::optional<RiskEstimate> open_space_risk;
};

inline EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                                  std::size_t n_thresholds = 201) {
  EvalReport r;
  r.auc_roc = auc_roc(scores, labels);
  r.f1_curve = f1_sweep(scores, labels, n_thresholds);
  for (int y : labels) (y == 1 ? r.n_pos : r.n_neg)++;
  return r;
}

// Fixed-format numbers keep reports byte-stable across runs.
inline void write_report_text(std::ostream& os, const EvalReport& r) {
  os << std::setprecision(6) << std::fixed;
  os << "samples:   " << r.n_pos + r.n_neg << " (" << r.n_pos << " anomalous, " << r.n_neg << " normal)\n";
  os << "AUC-ROC:   " << r.auc_roc << "\n";
  os << "max F1:    " << max_f1(r.f1_curve) << "\n";
  if (r.pixel_auc) os << "pixel AUC: " << *r.pixel_auc << "\n";
  if (r.open_space_risk) {
    os << "open-space risk: " << r.open_space_risk->risk << " (n=" << r.open_space_risk->n_samples
       << ", radius " << r.open_space_risk->radius << ")\n";
  }
  os.unsetf(std::ios::floatfield);
}

inline void write_report_csv(std::ostream& os, const EvalReport& r) {
  os << std::setprecision(17);
  os << "metric,value\n";
  os << "auc_roc," << r.auc_roc << "\n";
  os << "max_f1," << max_f1(r.f1_curve) << "\n";
  os << "n_pos," << r.n_pos << "\n";
  os << "n_neg," << r.n_neg << "\n";
  if (r.pixel_auc) os << "pixel_auc," << *r.pixel_auc << "\n";
  os << "\nthreshold,precision,recall,f1\n";
  for (const auto& p : r.f1_curve) {
    os << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.f1 << "\n";
  }
}

}  // namespace devnet
