#include <gtest/gtest.h>

#include <cmath>

#include "mgcma/distribution_alignment.hpp"
#include "mgcma/grad_check.hpp"
#include "test_contrastive_fixtures.hpp"
#include "test_helpers.hpp"

using namespace mgcma;
using namespace mgcma::testing;

namespace {

GaussianEmbedding random_gaussian(Rng& rng, std::size_t dim) {
  GaussianEmbedding g;
  for (std::size_t i = 0; i < dim; ++i) {
    g.mu.push_back(rng.normal());
    g.sigma.push_back(rng.uniform(0.05, 3.0));
  }
  return g;
}

double da_loss(const std::vector<GaussianEmbedding>& s, const std::vector<GaussianEmbedding>& t,
               ContrastiveConfig cfg) {
  return distribution_contrastive_loss(s, t, cfg).loss;
}

void expect_terms(const ContrastiveTerms& got, const FrozenTerms& want) {
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); };
  EXPECT_LT(rel(got.loss, want.loss), 1e-12) << got.loss;
  for (std::size_t i = 0; i < kFixturePairs; ++i) {
    EXPECT_LT(rel(got.s2t[i], want.s2t[i]), 1e-12) << i;
    EXPECT_LT(rel(got.t2s[i], want.t2s[i]), 1e-12) << i;
  }
}

}  // namespace

TEST(Wasserstein, IdenticalGaussiansAreAtDistanceZero) {
  Rng rng(1);
  auto g = random_gaussian(rng, 5);
  EXPECT_EQ(wasserstein2_sq(g, g), 0.0);
}

TEST(Wasserstein, HandArithmetic) {
  EXPECT_EQ(wasserstein2_sq({{0, 0}, {1, 1}}, {{1, 0}, {2, 1}}), 2.0);
}

TEST(Wasserstein, MatchesGeneralCovarianceFormula) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = random_gaussian(rng, 3), b = random_gaussian(rng, 3);
    EXPECT_NEAR(wasserstein2_sq(a, b), static_cast<double>(oracle_w2_general(a, b)), 1e-9);
  }
}

TEST(Wasserstein, MetricAxiomsOnRandomTriples) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = random_gaussian(rng, 4), b = random_gaussian(rng, 4), c = random_gaussian(rng, 4);
    const double ab = wasserstein2_sq(a, b), ba = wasserstein2_sq(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_GT(ab, 0.0);
    EXPECT_LE(std::sqrt(ab), std::sqrt(wasserstein2_sq(a, c)) + std::sqrt(wasserstein2_sq(c, b)) + 1e-9);
  }
}

TEST(Wasserstein, DimensionMismatchRejected) {
  EXPECT_THROW(wasserstein2_sq({{0}, {1}}, {{0, 0}, {1, 1}}), DimensionError);
}

TEST(Similarity, HandCases) {
  GaussianEmbedding g{{0, 0}, {1, 1}};
  EXPECT_EQ(similarity(g, g, {1.0, 0.0, 0.07}), 0.0);
  GaussianEmbedding h{{1, 0}, {2, 1}};  // W = 2
  EXPECT_EQ(similarity(g, h, {0.5, 1.0, 0.07}), 0.0);
  EXPECT_THROW(similarity(g, h, {0.0, 0.0, 0.07}), ConfigError);
}

TEST(Similarity, BatchMatrixMatchesDirectEvaluation) {
  Rng rng(4);
  std::vector<GaussianEmbedding> s{random_gaussian(rng, 3), random_gaussian(rng, 3)};
  std::vector<GaussianEmbedding> t{random_gaussian(rng, 3), random_gaussian(rng, 3)};
  ContrastiveConfig cfg{0.7, 0.4, 0.5};
  auto terms = distribution_contrastive_loss(s, t, cfg);
  // Rebuild the logits from the direct similarity and recompute the row term.
  for (std::size_t i = 0; i < 2; ++i) {
    long double z[2];
    for (std::size_t j = 0; j < 2; ++j) {
      long double w = 0.0L;
      for (std::size_t d = 0; d < 3; ++d) {
        w += std::pow(static_cast<long double>(s[i].mu[d]) - t[j].mu[d], 2) +
             std::pow(static_cast<long double>(s[i].sigma[d]) - t[j].sigma[d], 2);
      }
      z[j] = (-0.7L * w + 0.4L) / 0.5L;
      EXPECT_NEAR(similarity(s[i], t[j], cfg), static_cast<double>(-0.7L * w + 0.4L), 1e-12);
    }
    const long double expected = std::log(std::exp(z[0]) + std::exp(z[1])) - z[i];
    EXPECT_NEAR(terms.s2t[i], static_cast<double>(expected), 1e-12);
  }
}

TEST(DistributionLoss, SinglePairIsZero) {
  Rng rng(5);
  std::vector<GaussianEmbedding> s{random_gaussian(rng, 4)}, t{random_gaussian(rng, 4)};
  EXPECT_NEAR(da_loss(s, t, {}), 0.0, 1e-12);
}

TEST(DistributionLoss, EqualSimilaritiesGiveLn2) {
  GaussianEmbedding g{{0.5, -1.0}, {1.0, 2.0}};
  std::vector<GaussianEmbedding> s{g, g}, t{g, g};
  EXPECT_NEAR(da_loss(s, t, {}), std::log(2.0), 1e-12);
}

TEST(DistributionLoss, FixturesMatchOracleInputs) {
  auto f = gaussian_fixture();
  EXPECT_EQ(f.speech[0].mu[0], -0.48121769980184498);
  EXPECT_EQ(f.speech[2].sigma[3], 0.60004696366823407);
  EXPECT_EQ(f.text[0].mu[0], 1.6342791932637588);
  EXPECT_EQ(f.text[2].sigma[3], 0.88394586664851416);
}

TEST(DistributionLoss, FrozenSeed42Values) {
  auto f = gaussian_fixture();
  expect_terms(distribution_contrastive_loss(f.speech, f.text, {1.0, 0.0, 0.07}), kFrozenDistributionDefault);
  expect_terms(distribution_contrastive_loss(f.speech, f.text, {0.5, 2.0, 1.0}), kFrozenDistributionScaled);
}

TEST(DistributionLoss, BiasShiftInvariance) {
  auto f = gaussian_fixture();
  const double base = da_loss(f.speech, f.text, {1.0, 0.0, 0.7});
  for (double q : {-5.0, 0.0, 7.0}) EXPECT_NEAR(da_loss(f.speech, f.text, {1.0, q, 0.7}), base, 1e-12) << q;
}

TEST(DistributionLoss, ScaleTemperatureEquivalence) {
  auto f = gaussian_fixture();
  const double tau0 = 4.0;
  for (double c : {0.5, 2.0, 10.0}) {
    EXPECT_NEAR(da_loss(f.speech, f.text, {c, 0.0, tau0}), da_loss(f.speech, f.text, {1.0, 0.0, tau0 / c}), 1e-12)
        << c;
  }
}

TEST(DistributionLoss, RaisingPositiveSimilarityLowersItsTerm) {
  auto f = gaussian_fixture();
  ContrastiveConfig cfg{1.0, 0.0, 2.0};
  double previous = distribution_contrastive_loss(f.speech, f.text, cfg).s2t[0];
  // Pull text 0 toward speech 0 along mu; only the (0, 0) similarity and the
  // column-0 similarities change, so row 0's competitors are fixed.
  for (int step = 1; step <= 5; ++step) {
    for (std::size_t d = 0; d < kFixtureGaussianDim; ++d)
      f.text[0].mu[d] += 0.1 * (f.speech[0].mu[d] - f.text[0].mu[d]);
    const double current = distribution_contrastive_loss(f.speech, f.text, cfg).s2t[0];
    EXPECT_LT(current, previous);
    previous = current;
  }
}

TEST(DistributionLoss, BatchPermutationInvariance) {
  auto f = gaussian_fixture();
  const double base = da_loss(f.speech, f.text, {1.0, 0.0, 0.5});
  std::vector<GaussianEmbedding> s{f.speech[2], f.speech[0], f.speech[1]}, t{f.text[2], f.text[0], f.text[1]};
  EXPECT_NEAR(da_loss(s, t, {1.0, 0.0, 0.5}), base, 1e-12);
}

TEST(DistributionLoss, NonPositiveSigmaRejected) {
  std::vector<GaussianEmbedding> s{{{0.0}, {0.0}}}, t{{{0.0}, {1.0}}};
  EXPECT_THROW(da_loss(s, t, {}), ContractError);
}

TEST(DistributionConstructor, ShapesAndPositivity) {
  ParameterStore store;
  Rng rng(1);
  auto params = register_distribution_constructor(store, "d", {8, 2}, 1, rng);
  auto g = construct_distribution(random_tensor(rng, 5, 8, 3.0), params, store);
  ASSERT_EQ(g.mu.size(), 8u);
  ASSERT_EQ(g.sigma.size(), 8u);
  for (double s : g.sigma) EXPECT_GT(s, 0.0);
}

TEST(DistributionConstructor, ZeroSigmaBranchGivesLn2PlusFloor) {
  ParameterStore store;
  Rng rng(2);
  auto params = register_distribution_constructor(store, "d", {8, 2}, 1, rng);
  store.at(params.sigma_weights[0]).fill(0.0);
  store.at(params.sigma_biases[0]).fill(0.0);
  auto g = construct_distribution(random_tensor(rng, 4, 8), params, store);
  for (double s : g.sigma) EXPECT_NEAR(s, std::log(2.0) + 1e-6, 1e-15);
}

TEST(DistributionConstructor, MatchesStepByStepOracle) {
  ParameterStore store;
  Rng rng(3);
  auto params = register_distribution_constructor(store, "d", {8, 2}, 1, rng);
  store.at(params.mu_biases[0]) = random_tensor(rng, 1, 8, 0.1);
  store.at(params.sigma_biases[0]) = random_tensor(rng, 1, 8, 0.1);
  Tensor x = random_tensor(rng, 4, 8);
  auto g = construct_distribution(x, params, store);

  const Matrix xm = to_matrix(x);
  Matrix joined(4);
  for (std::size_t h = 0; h < 2; ++h) {
    Matrix head = oracle_attention(oracle_matmul(xm, to_matrix(store.at(params.attention.query[h]))),
                                   oracle_matmul(xm, to_matrix(store.at(params.attention.key[h]))),
                                   oracle_matmul(xm, to_matrix(store.at(params.attention.value[h]))));
    for (std::size_t i = 0; i < 4; ++i) joined[i].insert(joined[i].end(), head[i].begin(), head[i].end());
  }
  const Matrix h = oracle_add(xm, oracle_matmul(joined, to_matrix(store.at(params.attention.output))));
  auto branch = [&](const std::string& w, const std::string& b) {
    Matrix y = oracle_matmul(h, to_matrix(store.at(w)));
    for (auto& row : y)
      for (std::size_t j = 0; j < 8; ++j) row[j] += store.at(b)[j];
    return oracle_mean_rows(y);
  };
  const auto mu = branch(params.mu_weights[0], params.mu_biases[0]);
  const auto raw = branch(params.sigma_weights[0], params.sigma_biases[0]);
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(g.mu[j], static_cast<double>(mu[j]), 1e-12);
    EXPECT_NEAR(g.sigma[j], static_cast<double>(std::log1p(std::exp(raw[j])) + 1e-6L), 1e-12);
  }
}

TEST(DistributionConstructor, DeeperBranchesRegisterPerLayer) {
  ParameterStore store;
  Rng rng(4);
  auto params = register_distribution_constructor(store, "d", {4, 2}, 3, rng);
  EXPECT_EQ(params.mu_weights.size(), 3u);
  EXPECT_TRUE(store.contains("d.sigma.w2"));
  auto g = construct_distribution(random_tensor(rng, 3, 4), params, store);
  for (double s : g.sigma) EXPECT_GT(s, 0.0);
}

TEST(DistributionLoss, GradientCheckThroughConstructor) {
  ParameterStore store;
  Rng rng(9);
  auto ps = register_distribution_constructor(store, "s", {4, 2}, 1, rng);
  auto pt = register_distribution_constructor(store, "t", {4, 2}, 1, rng);
  std::vector<Tensor> xs, xt;
  for (int i = 0; i < 3; ++i) {
    xs.push_back(random_tensor(rng, 4, 4));
    xt.push_back(random_tensor(rng, 3, 4));
  }
  auto r = grad_check(store, [&](Graph& g, ParameterBinding& bind) {
    std::vector<Var> ms, ss, mt, st;
    for (int i = 0; i < 3; ++i) {
      auto a = construct_distribution(g.constant(xs[i]), ps, bind);
      auto b = construct_distribution(g.constant(xt[i]), pt, bind);
      ms.push_back(a.mu), ss.push_back(a.sigma), mt.push_back(b.mu), st.push_back(b.sigma);
    }
    return distribution_contrastive_loss(stack_rows(ms), stack_rows(ss), stack_rows(mt), stack_rows(st),
                                         {1.0, 0.0, 2.0});
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter;
}
