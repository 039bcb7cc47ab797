#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mgcma/checkpoint.hpp"
#include "mgcma/data_io.hpp"
#include "mgcma/metrics.hpp"
#include "mgcma/optimizer.hpp"
#include "mgcma/pipeline.hpp"

namespace mgcma {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  PipelineConfig pipeline;

  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("train: adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("train: adam epsilon must be positive");
    pipeline.validate();
  }

  /// 768-dim features, 12 heads, 6 blocks, lr 1e-5, batch 4, 100 epochs.
  static TrainConfig paper_scale() {
    TrainConfig cfg;
    cfg.learning_rate = 1e-5;
    cfg.batch_size = 4;
    cfg.max_epochs = 100;
    cfg.pipeline.model_dim = 768;
    cfg.pipeline.num_heads = 12;
    cfg.pipeline.n_blocks = 6;
    return cfg;
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double l_da = 0.0;
  double l_ia = 0.0;
  double l_ce = 0.0;
  double total = 0.0;
  double train_wa = 0.0;
  double train_ua = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

inline std::string to_jsonl(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["l_da"] = e.l_da;
  j["l_ia"] = e.l_ia;
  j["l_ce"] = e.l_ce;
  j["total"] = e.total;
  j["train_wa"] = e.train_wa;
  j["train_ua"] = e.train_ua;
  return j.dump();
}

inline std::string to_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) out += to_jsonl(e) + "\n";
  return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

/// Predictions and sample-weighted mean losses of one inference sweep.
struct InferenceResult {
  std::vector<std::size_t> predictions;  // aligned with the requested indices
  std::vector<std::size_t> labels;
  LossBreakdown mean_loss;               // per-pair vectors left empty
};

/// Inference over `indices` in the given order, in consecutive batches.
/// Predictions do not depend on the batching; contrastive losses do.
inline InferenceResult infer(const Model& model, const std::vector<LabeledPair>& data,
                             std::span<const std::size_t> indices, std::size_t batch_size) {
  if (indices.empty()) throw EmptyInputError("infer: no samples");
  InferenceResult result;
  double da = 0.0, ia = 0.0, ce = 0.0, total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t stop = std::min(indices.size(), start + batch_size);
    PairBatch batch;
    for (std::size_t k = start; k < stop; ++k) batch.add(data.at(indices[k]));
    Graph graph;
    ParameterBinding bind(graph, model.parameters(), false);
    ForwardPass pass = forward(model, batch, bind);
    const double w = static_cast<double>(batch.size());
    da += w * pass.breakdown.l_da;
    ia += w * pass.breakdown.l_ia;
    ce += w * pass.breakdown.l_ce;
    total += w * pass.breakdown.total;
    for (std::size_t p : predict(pass.logits.value())) result.predictions.push_back(p);
    for (std::size_t k = start; k < stop; ++k) result.labels.push_back(data[indices[k]].label);
  }
  const double n = static_cast<double>(indices.size());
  result.mean_loss.l_da = da / n;
  result.mean_loss.l_ia = ia / n;
  result.mean_loss.l_ce = ce / n;
  result.mean_loss.total = total / n;
  return result;
}

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
};

/// Mini-batch Adam on the total loss over data[indices].
///
/// Each epoch shuffles the training indices with the seeded generator, steps
/// once per batch, then logs losses and WA/UA from an inference sweep over the
/// training indices in their original order, so the log depends only on the
/// parameters at the end of the epoch.
inline TrainResult train(const std::vector<LabeledPair>& data, std::span<const std::size_t> indices,
                         const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (indices.empty()) throw EmptyInputError("train: empty training set");
  for (std::size_t i : indices) {
    if (data.at(i).speech.dim() != cfg.pipeline.model_dim || data[i].text.dim() != cfg.pipeline.model_dim) {
      throw DimensionError("train: dataset dim " + std::to_string(data[i].speech.dim()) +
                           " does not match model_dim " + std::to_string(cfg.pipeline.model_dim));
    }
    if (data[i].label >= cfg.pipeline.num_classes) throw DimensionError("train: label out of range");
  }

  TrainResult result{Model(cfg.pipeline, cfg.seed), {}};
  AdamState state;
  Rng shuffle_rng(derive_seed(cfg.seed, 21));
  std::vector<std::size_t> order(indices.begin(), indices.end());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      PairBatch batch;
      for (std::size_t k = start; k < stop; ++k) batch.add(data[order[k]]);
      Graph graph;
      ParameterBinding bind(graph, result.model.parameters());
      ForwardPass pass = forward(result.model, batch, bind);
      graph.backward(pass.total);
      adam_step(result.model.parameters(), bind.gradients(), state, cfg.adam());
    }

    InferenceResult sweep = infer(result.model, data, indices, cfg.batch_size);
    ConfusionMatrix confusion(cfg.pipeline.num_classes);
    confusion.add(sweep.labels, sweep.predictions);
    EpochLog entry{epoch,          sweep.mean_loss.l_da, sweep.mean_loss.l_ia, sweep.mean_loss.l_ce,
                   sweep.mean_loss.total, confusion.wa(),       confusion.ua()};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

inline TrainResult train(const std::vector<LabeledPair>& data, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  const auto idx = all_indices(data.size());
  return train(data, idx, cfg, on_epoch);
}

/// Confusion, WA and UA of `model` on data[indices].
inline MetricsReport evaluate(const Model& model, const std::vector<LabeledPair>& data,
                              std::span<const std::size_t> indices, std::size_t batch_size = 16) {
  if (indices.empty()) throw EmptyInputError("evaluate: empty test set");
  for (std::size_t i : indices)
    if (data.at(i).speech.dim() != model.config().model_dim)
      throw DimensionError("evaluate: checkpoint dim does not match data");
  InferenceResult sweep = infer(model, data, indices, batch_size);
  ConfusionMatrix confusion(model.config().num_classes);
  confusion.add(sweep.labels, sweep.predictions);
  return make_report(confusion);
}

inline MetricsReport evaluate(const Model& model, const std::vector<LabeledPair>& data) {
  const auto idx = all_indices(data.size());
  return evaluate(model, data, idx);
}

struct CrossValidationResult {
  MetricsReport report;  // pooled confusion plus per-fold rows
  std::array<std::vector<EpochLog>, kNumSessions> fold_logs;
};

/// Runs `count` jobs on up to `threads` workers; job i writes only slot i.
inline void run_parallel(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Leave-one-session-out cross-validation. Fold f trains from seed
/// derive_seed(seed, 1000 + f) and tests on session f + 1; WA/UA are
/// computed on the pooled confusion matrix.
inline CrossValidationResult cross_validate(const std::vector<LabeledPair>& data, const TrainConfig& cfg,
                                            std::size_t threads = 1) {
  cfg.validate();
  const auto folds = split_folds(data);
  CrossValidationResult result;
  std::array<FoldMetrics, kNumSessions> fold_metrics;
  run_parallel(kNumSessions, threads, [&](std::size_t f) {
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, 1000 + f);
    TrainResult trained = train(data, folds[f].train, fold_cfg);
    MetricsReport fold_report = evaluate(trained.model, data, folds[f].test, cfg.batch_size);
    fold_metrics[f] = FoldMetrics{folds[f].test_session, fold_report.wa, fold_report.ua, fold_report.confusion,
                                  fold_report.absent_class};
    result.fold_logs[f] = std::move(trained.log);
  });

  ConfusionMatrix pooled(cfg.pipeline.num_classes);
  double sum_wa = 0.0, sum_ua = 0.0;
  for (const auto& fm : fold_metrics) {
    pooled.merge(fm.confusion);
    sum_wa += fm.wa;
    sum_ua += fm.ua;
  }
  result.report = make_report(pooled);
  result.report.folds.assign(fold_metrics.begin(), fold_metrics.end());
  result.report.mean_fold_wa = sum_wa / static_cast<double>(kNumSessions);
  result.report.mean_fold_ua = sum_ua / static_cast<double>(kNumSessions);
  return result;
}

// ---------------------------------------------------------------------------
// Ablations: S0 full model, S1-S3 drop one module, S4 drops all, S5-S9
// reorder the three modules.

struct AblationVariant {
  std::string system;
  std::string configuration;
  std::vector<Stage> stage_order;
};

inline const std::vector<AblationVariant>& ablation_variants() {
  using enum Stage;
  static const std::vector<AblationVariant> variants{
      {"S0", "MGCMA", {DAM, TAM, IAM}},
      {"S1", "w/o DAM", {TAM, IAM}},
      {"S2", "w/o TAM", {DAM, IAM}},
      {"S3", "w/o IAM", {DAM, TAM}},
      {"S4", "w/o (DAM + TAM + IAM)", {}},
      {"S5", "DAM + IAM + TAM", {DAM, IAM, TAM}},
      {"S6", "IAM + DAM + TAM", {IAM, DAM, TAM}},
      {"S7", "IAM + TAM + DAM", {IAM, TAM, DAM}},
      {"S8", "TAM + DAM + IAM", {TAM, DAM, IAM}},
      {"S9", "TAM + IAM + DAM", {TAM, IAM, DAM}},
  };
  return variants;
}

inline const AblationVariant& ablation_variant(const std::string& system) {
  for (const auto& v : ablation_variants())
    if (v.system == system) return v;
  throw ConfigError("unknown ablation variant: " + system);
}

inline std::string stage_order_string(const std::vector<Stage>& order) {
  if (order.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < order.size(); ++i) s += std::string(i ? ">" : "") + stage_name(order[i]);
  return s;
}

struct AblationRow {
  AblationVariant variant;
  MetricsReport report;
  double max_train_l_da = 0.0;  // over every epoch of every fold
  double max_train_l_ia = 0.0;

  friend bool operator==(const AblationRow& a, const AblationRow& b) {
    return a.variant.system == b.variant.system && a.report == b.report && a.max_train_l_da == b.max_train_l_da &&
           a.max_train_l_ia == b.max_train_l_ia;
  }
};

/// Cross-validates each variant with the same seed and data; only the stage
/// order of the pipeline differs between rows.
inline std::vector<AblationRow> run_ablations(const std::vector<LabeledPair>& data, const TrainConfig& cfg,
                                              const std::vector<std::string>& systems, std::size_t threads = 1) {
  std::vector<AblationRow> rows;
  for (const auto& id : systems) {
    AblationRow row{ablation_variant(id), {}, 0.0, 0.0};
    TrainConfig variant_cfg = cfg;
    variant_cfg.pipeline.stage_order = row.variant.stage_order;
    CrossValidationResult cv = cross_validate(data, variant_cfg, threads);
    row.report = cv.report;
    for (const auto& log : cv.fold_logs)
      for (const auto& e : log) {
        row.max_train_l_da = std::max(row.max_train_l_da, e.l_da);
        row.max_train_l_ia = std::max(row.max_train_l_ia, e.l_ia);
      }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV output

namespace detail {
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}
}  // namespace detail

/// Header: scope,test_session,wa,ua,samples,correct,absent_class
/// Rows: one per fold ("fold"), then "pooled" and "fold_mean"; a report
/// without folds has a single "all" row.
inline std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream out;
  out << "scope,test_session,wa,ua,samples,correct,absent_class\n";
  for (const auto& f : r.folds) {
    out << "fold," << f.test_session << ',' << detail::fmt(f.wa) << ',' << detail::fmt(f.ua) << ','
        << f.confusion.total() << ',' << f.confusion.correct() << ',' << (f.absent_class ? 1 : 0) << '\n';
  }
  out << (r.folds.empty() ? "all" : "pooled") << ",," << detail::fmt(r.wa) << ',' << detail::fmt(r.ua) << ','
      << r.confusion.total() << ',' << r.confusion.correct() << ',' << (r.absent_class ? 1 : 0) << '\n';
  if (!r.folds.empty())
    out << "fold_mean,," << detail::fmt(r.mean_fold_wa) << ',' << detail::fmt(r.mean_fold_ua) << ",,,\n";
  return out.str();
}

/// Header: true_label,pred_0,...,pred_{C-1}
inline std::string confusion_csv(const ConfusionMatrix& c) {
  std::ostringstream out;
  out << "true_label";
  for (std::size_t j = 0; j < c.num_classes(); ++j) out << ",pred_" << j;
  out << '\n';
  for (std::size_t i = 0; i < c.num_classes(); ++i) {
    out << i;
    for (std::size_t j = 0; j < c.num_classes(); ++j) out << ',' << c(i, j);
    out << '\n';
  }
  return out.str();
}

/// Header: system,configuration,stage_order,wa,ua,mean_fold_wa,mean_fold_ua,max_train_l_da,max_train_l_ia
inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "system,configuration,stage_order,wa,ua,mean_fold_wa,mean_fold_ua,max_train_l_da,max_train_l_ia\n";
  for (const auto& r : rows) {
    out << r.variant.system << ",\"" << r.variant.configuration << "\"," << stage_order_string(r.variant.stage_order)
        << ',' << detail::fmt(r.report.wa) << ',' << detail::fmt(r.report.ua) << ','
        << detail::fmt(r.report.mean_fold_wa) << ',' << detail::fmt(r.report.mean_fold_ua) << ','
        << detail::fmt(r.max_train_l_da) << ',' << detail::fmt(r.max_train_l_ia) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Embedding export

enum class EmbeddingTap { encoder, post_alignment, pooled };

inline EmbeddingTap parse_tap(const std::string& name) {
  if (name == "encoder") return EmbeddingTap::encoder;
  if (name == "post_alignment") return EmbeddingTap::post_alignment;
  if (name == "pooled") return EmbeddingTap::pooled;
  throw ConfigError("invalid tap '" + name + "' (expected encoder, post_alignment or pooled)");
}

/// One row per utterance per modality (speech first):
/// utterance_id,modality,label,v0..v{D-1}.
///
/// encoder: mean of the raw feature tokens. post_alignment: mean of the
/// representations after every stage (the classifier inputs). pooled: the
/// L2-normalized instance vector of those representations.
inline std::string export_embeddings(const Model& model, const std::vector<LabeledPair>& data, EmbeddingTap tap) {
  if (data.empty()) throw EmptyInputError("export_embeddings: no utterances");
  const std::size_t dim = model.config().model_dim;
  std::ostringstream out;
  out << "utterance_id,modality,label";
  for (std::size_t j = 0; j < dim; ++j) out << ",v" << j;
  out << '\n';
  auto emit = [&](const LabeledPair& p, Modality m, const Tensor& row) {
    out << p.speech.utterance_id << ',' << modality_name(m) << ',' << p.label;
    char buf[40];
    for (double v : row.data()) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out << buf;
    }
    out << '\n';
  };
  for (const auto& p : data) {
    if (p.speech.dim() != dim) throw DimensionError("export_embeddings: checkpoint dim does not match data");
    Graph graph;
    ParameterBinding bind(graph, model.parameters(), false);
    Var s, t;
    if (tap == EmbeddingTap::encoder) {
      s = mean_rows(graph.constant(p.speech.tokens));
      t = mean_rows(graph.constant(p.text.tokens));
    } else {
      PairBatch batch;
      batch.add(p);
      ForwardPass pass = forward(model, batch, bind);
      const bool normalize = tap == EmbeddingTap::pooled;
      s = pool_instance(pass.speech[0], normalize);
      t = pool_instance(pass.text[0], normalize);
    }
    emit(p, Modality::speech, s.value());
    emit(p, Modality::text, t.value());
  }
  return out.str();
}

}  // namespace mgcma
