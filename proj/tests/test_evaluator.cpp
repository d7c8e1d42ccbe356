#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "devnet/evaluator.hpp"
#include "oracles.hpp"

namespace devnet {
namespace {

TEST(Auc, TwoPoints) {
  EXPECT_EQ(auc_roc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(auc_roc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}), 0.0);
}

TEST(Auc, AllEqualScoresGiveHalf) {
  EXPECT_EQ(auc_roc(std::vector<double>(6, 0.3), std::vector<int>{1, 0, 1, 0, 0, 1}), 0.5);
}

TEST(Auc, SingleClassIsContractError) {
  EXPECT_THROW(auc_roc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), ContractError);
  EXPECT_THROW(auc_roc(std::vector<double>{1, 2}, std::vector<int>{0}), DimensionError);
}

TEST(Auc, MatchesAllPairsOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> n_of(2, 60), level(0, 9), bit(0, 1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = static_cast<std::size_t>(n_of(rng));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = 0.1 * level(rng);
      y[i] = bit(rng);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(auc_roc(s, y), oracle::all_pairs_auc(s, y), 1e-12);
  }
}

TEST(AucProperty, InvariantUnderMonotoneMaps) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int t = 0; t < 30; ++t) {
    std::vector<double> s(40), e(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = g(rng);
      y[i] = i % 3 == 0;
      e[i] = std::exp(2.0 * s[i]) + 5.0;
    }
    EXPECT_NEAR(auc_roc(s, y), auc_roc(e, y), 1e-12);
  }
}

TEST(AucProperty, NegatedScoresComplement) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(0, 5);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> s(25), neg(25);
    std::vector<int> y(25);
    for (std::size_t i = 0; i < 25; ++i) {
      s[i] = level(rng);
      neg[i] = -s[i];
      y[i] = i % 2;
    }
    EXPECT_NEAR(auc_roc(s, y) + auc_roc(neg, y), 1.0, 1e-12);
  }
}

TEST(F1, PerfectSeparation) {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  const auto curve = f1_sweep(s, y);
  EXPECT_EQ(curve.size(), 201u);
  EXPECT_EQ(max_f1(curve), 1.0);
  EXPECT_EQ(curve.front().threshold, 0.1);
  EXPECT_EQ(curve.back().threshold, 0.9);
}

TEST(F1, AllEqualScoresCollapseToOnePoint) {
  const auto curve = f1_sweep(std::vector<double>(4, 1.0), std::vector<int>{1, 0, 0, 0});
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_DOUBLE_EQ(curve[0].precision, 0.25);
  EXPECT_DOUBLE_EQ(curve[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(curve[0].f1, 0.4);
}

TEST(F1, MatchesConfusionMatrixOracle) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<double> s(50);
  std::vector<int> y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    y[i] = i < 15;
    s[i] = g(rng) + (y[i] ? 1.0 : 0.0);
  }
  for (const F1Point& p : f1_sweep(s, y, 21)) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      if (s[i] >= p.threshold) (y[i] ? tp : fp) += 1;
      else if (y[i]) fn += 1;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp / (tp + fn);
    EXPECT_NEAR(p.precision, prec, 1e-12);
    EXPECT_NEAR(p.recall, rec, 1e-12);
    EXPECT_NEAR(p.f1, prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0, 1e-12);
  }
}

TEST(Probability, TailValues) {
  EXPECT_NEAR(score_to_probability(1.96), 0.05, 1e-3);
  EXPECT_NEAR(score_to_probability(kZ95), 0.05, 1e-12);
  EXPECT_NEAR(score_to_probability(5.0), 5.73303e-7, 1e-11);
  EXPECT_EQ(score_to_probability(0.0), 1.0);
  EXPECT_EQ(score_to_probability(-1.5), score_to_probability(1.5));
  EXPECT_NEAR(score_to_probability(3.0, PriorConfig{1.0, 2.0, 10}), score_to_probability(1.0), 1e-15);
}

TEST(Probability, NormalCdf) {
  EXPECT_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(kZ95), 0.975, 1e-12);
}

TEST(OpenSpace, RadiusIsNearestNeighbourQuantile) {
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 20; ++i) pts.push_back({static_cast<double>(i), 0.0});
  pts.push_back({100.0, 0.0});  // isolated point, nearest neighbour at 81
  // 21 points; nearest rank ceil(0.95 * 21) = 20 picks the largest unit gap.
  EXPECT_DOUBLE_EQ(open_space_radius(pts), 1.0);
  EXPECT_DOUBLE_EQ(open_space_radius(pts, 1.0), 81.0);
}

TEST(OpenSpace, EverythingNormalMeansRiskIsOpenShare) {
  const std::vector<std::vector<double>> normals{{0.0, 0.0}};
  const Box region{{-1.0, -1.0}, {1.0, 1.0}};
  std::mt19937_64 rng(5);
  const auto est = estimate_open_space_risk([](std::span<const double>) { return 0.0; }, normals, region,
                                            kZ95, 200000, 0.5, rng);
  const double open_share = 1.0 - std::numbers::pi * 0.25 / 4.0;
  EXPECT_NEAR(est.risk, open_share, 4.0 * std::sqrt(open_share * (1 - open_share) / 200000));
  EXPECT_DOUBLE_EQ(est.normal_fraction, 1.0);
}

TEST(OpenSpace, NothingNormalMeansZeroRisk) {
  const std::vector<std::vector<double>> normals{{0.0}};
  std::mt19937_64 rng(6);
  const auto est = estimate_open_space_risk([](std::span<const double>) { return 10.0; }, normals,
                                            Box{{-1.0}, {1.0}}, kZ95, 1000, 0.1, rng);
  EXPECT_EQ(est.risk, 0.0);
  EXPECT_EQ(est.normal_fraction, 0.0);
}

TEST(OpenSpace, DetectorThatFlagsFarPointsHasLowRisk) {
  const std::vector<std::vector<double>> normals{{0.0, 0.0}};
  const Box region{{-2.0, -2.0}, {2.0, 2.0}};
  auto radial = [](std::span<const double> x) { return 3.0 * std::sqrt(x[0] * x[0] + x[1] * x[1]); };
  auto flat = [](std::span<const double>) { return 0.0; };
  std::mt19937_64 r1(7), r2(7);
  const auto good = estimate_open_space_risk(radial, normals, region, kZ95, 20000, 0.5, r1);
  const auto bad = estimate_open_space_risk(flat, normals, region, kZ95, 20000, 0.5, r2);
  EXPECT_LT(good.risk, 0.5);
  EXPECT_GT(bad.risk, 0.9);
}

TEST(OpenSpace, EstimateConverges) {
  const std::vector<std::vector<double>> normals{{0.0, 0.0}};
  const Box region{{-1.0, -1.0}, {1.0, 1.0}};
  auto f = [](std::span<const double> x) { return 4.0 * std::fabs(x[0]); };
  std::mt19937_64 rng(8);
  double prev_se = 1.0;
  for (std::size_t n : {1000u, 10000u, 100000u}) {
    const auto est = estimate_open_space_risk(f, normals, region, kZ95, n, 0.3, rng);
    EXPECT_LT(est.standard_error, prev_se);
    prev_se = est.standard_error;
  }
  EXPECT_LT(prev_se, 0.01);
}

TEST(OpenSpace, ContractChecks) {
  const std::vector<std::vector<double>> normals{{0.0}};
  std::mt19937_64 rng(9);
  auto f = [](std::span<const double>) { return 0.0; };
  EXPECT_THROW(estimate_open_space_risk(f, normals, Box{{-1.0}, {1.0}}, kZ95, 999, 0.1, rng), ContractError);
  EXPECT_THROW(estimate_open_space_risk(f, normals, Box{{1.0}, {2.0}}, kZ95, 1000, 0.1, rng), ContractError);
}

TEST(Report, TextIsFixedFormat) {
  const auto r = evaluate_scores(std::vector<double>{0.1, 0.9, 0.4}, std::vector<int>{0, 1, 0});
  std::ostringstream os;
  write_report_text(os, r);
  EXPECT_NE(os.str().find("AUC-ROC:   1.000000"), std::string::npos);
  EXPECT_NE(os.str().find("(1 anomalous, 2 normal)"), std::string::npos);
}

}  // namespace
}  // namespace devnet
