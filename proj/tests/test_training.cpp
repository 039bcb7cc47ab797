#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mgcma/checkpoint.hpp"
#include "mgcma/metrics.hpp"
#include "mgcma/optimizer.hpp"
#include "mgcma/training.hpp"
#include "test_helpers.hpp"

using namespace mgcma;
using namespace mgcma::testing;

namespace {

TrainConfig tiny_config(std::size_t epochs = 2) {
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.pipeline.model_dim = 8;
  cfg.pipeline.num_heads = 2;
  cfg.pipeline.n_blocks = 1;
  return cfg;
}

std::vector<LabeledPair> tiny_data(double separation = 4.0, std::size_t n = 20) {
  SyntheticConfig s;
  s.n_pairs = n;
  s.dim = 8;
  s.len_speech = 3;
  s.len_text = 2;
  s.separation = separation;
  s.seed = 11;
  return generate_synthetic_pairs(s);
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> lines;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

}  // namespace

TEST(Adam, ZeroGradientIsFixedPoint) {
  ParameterStore store;
  store.add("x", Tensor::row({1.0, -2.0, 3.0}));
  const Tensor before = store.at("x");
  AdamState state;
  for (int i = 0; i < 3; ++i) adam_step(store, {Tensor({1, 3})}, state, {});
  EXPECT_EQ(store.at("x"), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store;
  store.add("x", Tensor({1, 1}, {0.5}));
  AdamState state;
  adam_step(store, {Tensor({1, 1}, {1.0})}, state, {0.01, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(store.at("x")[0] - 0.5, -0.01, 1e-9);
}

// Reference: a separately written scalar Adam on f(theta) = theta^2.
TEST(Adam, FiveStepsOnQuadraticMatchReference) {
  const long double lr = 0.1L, b1 = 0.9L, b2 = 0.999L, eps = 1e-8L;
  long double theta = 1.0L, m = 0.0L, v = 0.0L;
  std::vector<long double> reference;
  for (int t = 1; t <= 5; ++t) {
    const long double g = 2.0L * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const long double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
    reference.push_back(theta);
  }
  ParameterStore store;
  store.add("theta", Tensor({1, 1}, {1.0}));
  AdamState state;
  for (int t = 0; t < 5; ++t) {
    Graph g;
    ParameterBinding bind(g, store);
    Var th = bind("theta");
    g.backward(mul(th, th));
    adam_step(store, bind.gradients(), state, {0.1, 0.9, 0.999, 1e-8});
    EXPECT_NEAR(store.at("theta")[0], static_cast<double>(reference[t]), 1e-10) << t;
  }
}

TEST(Training, SameSeedGivesIdenticalLogsAndCheckpoints) {
  const auto data = tiny_data();
  const auto a = train(data, tiny_config());
  const auto b = train(data, tiny_config());
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(encode_checkpoint(a.model), encode_checkpoint(b.model));
  EXPECT_EQ(to_jsonl(a.log), to_jsonl(b.log));
}

TEST(Training, ZeroLearningRateLeavesParametersAndLossesConstant) {
  const auto data = tiny_data();
  TrainConfig cfg = tiny_config(3);
  cfg.learning_rate = 0.0;
  const auto result = train(data, cfg);
  EXPECT_TRUE(result.model.parameters() == Model(cfg.pipeline, cfg.seed).parameters());
  for (const auto& e : result.log) {
    EXPECT_EQ(e.l_da, result.log[0].l_da);
    EXPECT_EQ(e.l_ia, result.log[0].l_ia);
    EXPECT_EQ(e.l_ce, result.log[0].l_ce);
    EXPECT_EQ(e.total, result.log[0].total);
  }
}

TEST(Training, LearnsSeparableData) {
  const auto data = tiny_data(4.0, 40);
  TrainConfig cfg = tiny_config(15);
  cfg.learning_rate = 3e-3;
  const auto result = train(data, cfg);
  EXPECT_GE(result.log.back().train_ua, 0.9);
  EXPECT_LT(result.log.back().l_ce, result.log.front().l_ce);
}

TEST(Training, LogLineFormat) {
  EpochLog e{3, 0.5, 0.25, 1.0, 1.75, 0.5, 0.625};
  EXPECT_EQ(to_jsonl(e),
            R"({"epoch":3,"l_da":0.5,"l_ia":0.25,"l_ce":1.0,"total":1.75,"train_wa":0.5,"train_ua":0.625})");
}

TEST(Training, DimensionMismatchRejected) {
  TrainConfig cfg = tiny_config();
  cfg.pipeline.model_dim = 16;
  EXPECT_THROW(train(tiny_data(), cfg), DimensionError);
}

TEST(Metrics, PerfectPredictions) {
  ConfusionMatrix c;
  for (std::size_t k = 0; k < 4; ++k) c.add(k, k, 3);
  EXPECT_EQ(c.wa(), 1.0);
  EXPECT_EQ(c.ua(), 1.0);
}

TEST(Metrics, HandCase) {
  ConfusionMatrix c;
  c.add(0, 0, 3);
  c.add(0, 1, 1);
  c.add(1, 1, 1);
  c.add(1, 2, 1);
  c.add(2, 2, 2);
  c.add(3, 3, 2);
  EXPECT_EQ(c.wa(), 0.8);
  EXPECT_EQ(c.ua(), 0.8125);
}

TEST(Metrics, MatchesCountingOracleOnRandomMatrices) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> truth, pred;
    const std::size_t n = 1 + rng.below(60);
    for (std::size_t i = 0; i < n; ++i) {
      truth.push_back(rng.below(4));
      pred.push_back(rng.below(4));
    }
    ConfusionMatrix c;
    c.add(truth, pred);
    std::size_t hits = 0;
    std::vector<std::uint64_t> support(4), correct(4);
    for (std::size_t i = 0; i < n; ++i) {
      ++support[truth[i]];
      if (truth[i] == pred[i]) ++hits, ++correct[truth[i]];
    }
    EXPECT_EQ(c.wa(), static_cast<double>(hits) / static_cast<double>(n));
    EXPECT_EQ(c.ua(), oracle_mean_recall(correct, support));
  }
}

TEST(Metrics, BalancedSupportsGiveEqualWaUa) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionMatrix c;
    for (std::size_t k = 0; k < 4; ++k) {
      std::size_t hits = rng.below(6);
      c.add(k, k, hits);
      c.add(k, (k + 1) % 4, 5 - hits);
    }
    EXPECT_EQ(c.wa(), c.ua());
  }
}

TEST(Metrics, AbsentClassFlaggedAndEmptyRejected) {
  ConfusionMatrix c;
  c.add(0, 0);
  c.add(1, 0);
  EXPECT_TRUE(c.has_absent_class());
  EXPECT_EQ(c.ua(), 0.5);
  EXPECT_THROW(ConfusionMatrix().wa(), EmptyInputError);
}

TEST(CrossValidation, ReportsFiveFoldsAndPooledMetrics) {
  const auto data = tiny_data(4.0, 20);
  const auto cv = cross_validate(data, tiny_config(1));
  ASSERT_EQ(cv.report.folds.size(), 5u);
  ConfusionMatrix pooled;
  double wa = 0.0;
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_EQ(cv.report.folds[f].test_session, static_cast<int>(f) + 1);
    EXPECT_EQ(cv.report.folds[f].confusion.total(), 4u);
    EXPECT_EQ(cv.fold_logs[f].size(), 1u);
    pooled.merge(cv.report.folds[f].confusion);
    wa += cv.report.folds[f].wa;
  }
  EXPECT_EQ(cv.report.confusion, pooled);
  EXPECT_EQ(cv.report.wa, pooled.wa());
  EXPECT_EQ(cv.report.mean_fold_wa, wa / 5.0);

  const auto lines = split_lines(metrics_csv(cv.report));
  ASSERT_EQ(lines.size(), 8u);
  EXPECT_EQ(lines[0], "scope,test_session,wa,ua,samples,correct,absent_class");
  EXPECT_EQ(lines[6].rfind("pooled,", 0), 0u);
  EXPECT_EQ(lines[7].rfind("fold_mean,", 0), 0u);
}

TEST(CrossValidation, ThreadCountDoesNotChangeResults) {
  const auto data = tiny_data(4.0, 20);
  const auto a = cross_validate(data, tiny_config(1), 1);
  const auto b = cross_validate(data, tiny_config(1), 3);
  EXPECT_EQ(a.report, b.report);
  EXPECT_EQ(a.fold_logs, b.fold_logs);
}

TEST(Ablation, VariantTable) {
  const auto& v = ablation_variants();
  ASSERT_EQ(v.size(), 10u);
  EXPECT_EQ(stage_order_string(ablation_variant("S0").stage_order), "DAM>TAM>IAM");
  EXPECT_EQ(stage_order_string(ablation_variant("S4").stage_order), "none");
  EXPECT_EQ(stage_order_string(ablation_variant("S9").stage_order), "TAM>IAM>DAM");
  EXPECT_THROW(ablation_variant("S10"), ConfigError);
}

TEST(Ablation, BareVariantHasExactlyZeroAlignmentLoss) {
  const auto data = tiny_data(4.0, 20);
  const auto rows = run_ablations(data, tiny_config(1), {"S0", "S4"});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GT(rows[0].max_train_l_da, 0.0);
  EXPECT_GT(rows[0].max_train_l_ia, 0.0);
  EXPECT_EQ(rows[1].max_train_l_da, 0.0);
  EXPECT_EQ(rows[1].max_train_l_ia, 0.0);
  const auto lines = split_lines(ablation_csv(rows));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0],
            "system,configuration,stage_order,wa,ua,mean_fold_wa,mean_fold_ua,max_train_l_da,max_train_l_ia");
  EXPECT_EQ(lines[2].rfind("S4,", 0), 0u);
}

TEST(Export, LayoutAndRowCounts) {
  const auto data = tiny_data(4.0, 10);
  Model model(tiny_config().pipeline, 1);
  for (auto tap : {EmbeddingTap::encoder, EmbeddingTap::post_alignment, EmbeddingTap::pooled}) {
    const auto lines = split_lines(export_embeddings(model, data, tap));
    ASSERT_EQ(lines.size(), 1 + 2 * data.size());
    for (const auto& line : lines) EXPECT_EQ(std::count(line.begin(), line.end(), ','), 8 + 2);
    EXPECT_EQ(lines[1].rfind("utt00000,speech,0,", 0), 0u);
    EXPECT_EQ(lines[2].rfind("utt00000,text,0,", 0), 0u);
  }
  EXPECT_THROW(parse_tap("logits"), ConfigError);
}

TEST(Export, EncoderTapIsMeanOfRawFeatures) {
  const auto data = tiny_data(4.0, 5);
  Model model(tiny_config().pipeline, 1);
  const auto lines = split_lines(export_embeddings(model, data, EmbeddingTap::encoder));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int m = 0; m < 2; ++m) {
      const Tensor& tokens = m == 0 ? data[i].speech.tokens : data[i].text.tokens;
      const auto mean = oracle_mean_rows(to_matrix(tokens));
      std::istringstream row(lines[1 + 2 * i + m]);
      std::string cell;
      for (int skip = 0; skip < 3; ++skip) std::getline(row, cell, ',');
      for (std::size_t j = 0; j < 8; ++j) {
        std::getline(row, cell, ',');
        EXPECT_NEAR(std::stod(cell), static_cast<double>(mean[j]), 1e-15);
      }
    }
  }
}

TEST(Export, PooledTapHasUnitNorm) {
  const auto data = tiny_data(4.0, 5);
  Model model(tiny_config().pipeline, 1);
  const auto lines = split_lines(export_embeddings(model, data, EmbeddingTap::pooled));
  for (std::size_t r = 1; r < lines.size(); ++r) {
    std::istringstream row(lines[r]);
    std::string cell;
    for (int skip = 0; skip < 3; ++skip) std::getline(row, cell, ',');
    double ss = 0.0;
    while (std::getline(row, cell, ',')) ss += std::stod(cell) * std::stod(cell);
    EXPECT_NEAR(ss, 1.0, 1e-12);
  }
}

TEST(Evaluate, MemorizedTrainingSetIsConsistent) {
  const auto data = tiny_data(4.0, 20);
  TrainConfig cfg = tiny_config(10);
  cfg.learning_rate = 3e-3;
  const auto result = train(data, cfg);
  const auto report = evaluate(result.model, data);
  EXPECT_EQ(report.wa, result.log.back().train_wa);
  EXPECT_EQ(report.ua, result.log.back().train_ua);
  EXPECT_EQ(report.confusion.total(), data.size());
}
