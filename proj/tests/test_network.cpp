#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "devnet/network.hpp"
#include "oracles.hpp"

namespace devnet {
namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

TEST(Network, InitIsDeterministicPerSeed) {
  EXPECT_EQ(init_params({6, 8, 4}, 3), init_params({6, 8, 4}, 3));
  EXPECT_FALSE(init_params({6, 8, 4}, 3) == init_params({6, 8, 4}, 4));
}

TEST(Network, InitShapesFollowArch) {
  const NetworkParams p = init_params({4, 8, 8}, 1);
  ASSERT_EQ(p.feature_layers.size(), 2u);
  EXPECT_EQ(p.feature_layers[0].weight.shape(), (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(p.feature_layers[1].weight.shape(), (std::vector<std::size_t>{8, 8}));
  EXPECT_EQ(p.scorer.weight.shape(), (std::vector<std::size_t>{8, 1}));
  EXPECT_EQ(p.scorer.bias.size(), 1u);
  EXPECT_EQ(p.arch(), (std::vector<std::size_t>{4, 8, 8}));
}

TEST(Network, InitSpreadMatchesUniformBound) {
  const NetworkParams p = init_params({50, 200, 8}, 17);
  const Tensor& w = p.feature_layers[0].weight;
  const double bound = std::sqrt(6.0 / 50.0);
  double s = 0.0, ss = 0.0;
  for (double v : w.storage()) {
    EXPECT_LE(std::fabs(v), bound);
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(ss / n - (s / n) * (s / n));
  EXPECT_NEAR(sd, bound / std::sqrt(3.0), 0.2 * bound / std::sqrt(3.0));
  for (double b : p.feature_layers[0].bias.storage()) EXPECT_EQ(b, 0.0);
}

TEST(Network, InvalidArchIsConfigError) {
  EXPECT_THROW(init_params({4}, 0), ConfigError);
  EXPECT_THROW(init_params({4, 0, 2}, 0), ConfigError);
}

TEST(Network, EmbedIdentityAndZeroLayers) {
  NetworkParams p = init_params({3, 3}, 0);
  p.feature_layers[0].weight = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const std::vector<double> x{-1.0, 0.5, 2.0};
  EXPECT_EQ(embed(x, p), x);  // single layer is linear, negatives survive
  for (double& w : p.feature_layers[0].weight.storage()) w = 0.0;
  EXPECT_EQ(embed(x, p), (std::vector<double>{0, 0, 0}));
}

TEST(Network, HiddenReluClipsNegatives) {
  NetworkParams p = init_params({2, 2, 2}, 0);
  p.feature_layers[0].weight = Tensor::matrix(2, 2, {1, 0, 0, 1});
  p.feature_layers[1].weight = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_EQ(embed(std::vector<double>{-3.0, 4.0}, p), (std::vector<double>{0.0, 4.0}));
}

TEST(Network, ScoreInstanceUnitCases) {
  NetworkParams p = init_params({2, 2}, 0);
  p.scorer.weight = Tensor::matrix(2, 1, {1.0, 1.0});
  p.scorer.bias = Tensor::vector({0.0});
  EXPECT_EQ(score_instance(std::vector<double>{1.0, 2.0}, p), 3.0);
  p.scorer.weight = Tensor::matrix(2, 1, {0.0, 0.0});
  p.scorer.bias = Tensor::vector({-0.25});
  EXPECT_EQ(score_instance(std::vector<double>{7.0, 9.0}, p), -0.25);
  EXPECT_THROW(score_instance(std::vector<double>{1.0}, p), DimensionError);
}

TEST(Network, EmbedMatchesReevaluationOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 25; ++t) {
    const NetworkParams p = init_params({6, 9, 5, 3}, 50 + t);
    const auto x = random_vec(6, rng);
    const auto a = embed(x, p);
    const auto b = oracle::mlp_embed(p, x);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_NEAR(score_instance(a, p), oracle::mlp_score(p, x), 1e-12);
  }
}

TEST(Network, ScoringIsCompositionOfEmbedAndScorer) {
  std::mt19937_64 rng(6);
  const NetworkParams p = init_params({4, 8, 4}, 2);
  Tensor X({5, 4});
  for (double& v : X.storage()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto s = score_instances(X, p);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(s[j], score_instance(embed(X.row(j), p), p));
}

TEST(Network, PlainAndTapedScoresAgreeBitwise) {
  std::mt19937_64 rng(9);
  const NetworkParams p = init_params({7, 16, 8}, 12);
  Tensor X({11, 7});
  for (double& v : X.storage()) v = std::uniform_real_distribution<double>(-3, 3)(rng);
  ForwardPass f = forward(p, X);
  const auto plain = score_instances(X, p);
  for (std::size_t j = 0; j < plain.size(); ++j) EXPECT_EQ(plain[j], f.tape.value(f.output)[j]);
}

TEST(NetworkProperty, InstanceOrderEquivariance) {
  std::mt19937_64 rng(10);
  const NetworkParams p = init_params({3, 6, 2}, 8);
  for (int t = 0; t < 20; ++t) {
    Tensor X({6, 3});
    for (double& v : X.storage()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor Y({6, 3});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 3; ++c) Y.at(i, c) = X.at(perm[i], c);
    const auto sx = score_instances(X, p);
    const auto sy = score_instances(Y, p);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(sy[i], sx[perm[i]]);
  }
}

TEST(Network, EmptyBagIsContractError) {
  const NetworkParams p = init_params({3, 2}, 0);
  EXPECT_THROW(score_instances(Tensor(), p), ContractError);
}

}  // namespace
}  // namespace devnet
