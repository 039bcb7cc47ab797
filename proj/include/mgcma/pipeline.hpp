#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgcma/attention.hpp"
#include "mgcma/autograd.hpp"
#include "mgcma/data_io.hpp"
#include "mgcma/distribution_alignment.hpp"
#include "mgcma/instance_alignment.hpp"
#include "mgcma/parameters.hpp"
#include "mgcma/token_alignment.hpp"

namespace mgcma {

enum class EmotionLabel : std::size_t { angry = 0, happy = 1, sad = 2, neutral = 3 };

inline constexpr std::array<const char*, 4> kEmotionNames{"angry", "happy", "sad", "neutral"};

inline const char* emotion_name(EmotionLabel label) { return kEmotionNames.at(static_cast<std::size_t>(label)); }

inline EmotionLabel parse_emotion(const std::string& name) {
  for (std::size_t i = 0; i < kEmotionNames.size(); ++i)
    if (name == kEmotionNames[i]) return static_cast<EmotionLabel>(i);
  throw FormatError("unknown emotion label: " + name);
}

/// Alignment modules: distribution-, token- and instance-based.
enum class Stage { DAM, TAM, IAM };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::DAM: return "DAM";
    case Stage::TAM: return "TAM";
    case Stage::IAM: return "IAM";
  }
  return "?";
}

inline Stage parse_stage(const std::string& name) {
  if (name == "DAM") return Stage::DAM;
  if (name == "TAM") return Stage::TAM;
  if (name == "IAM") return Stage::IAM;
  throw ConfigError("unknown stage: " + name);
}

struct PipelineConfig {
  std::vector<Stage> stage_order{Stage::DAM, Stage::TAM, Stage::IAM};
  std::size_t model_dim = 64;
  std::size_t num_heads = 4;
  std::size_t n_blocks = 2;
  double tau = 0.07;
  double p = 1.0;
  double q = 0.0;
  std::size_t num_classes = 4;
  bool normalize_instances = true;
  std::size_t branch_layers = 1;
  bool share_branch_weights = false;
  bool layer_norm = false;

  bool enabled(Stage s) const { return std::find(stage_order.begin(), stage_order.end(), s) != stage_order.end(); }

  AttentionConfig attention() const { return {model_dim, num_heads}; }
  ContrastiveConfig contrastive() const { return {p, q, tau}; }

  void validate() const {
    attention().validate();
    contrastive().validate();
    if (num_classes < 2) throw ConfigError("pipeline: num_classes must be >= 2");
    if (n_blocks == 0) throw ConfigError("pipeline: n_blocks must be >= 1");
    if (branch_layers == 0) throw ConfigError("pipeline: branch_layers must be >= 1");
    for (std::size_t i = 0; i < stage_order.size(); ++i)
      for (std::size_t j = i + 1; j < stage_order.size(); ++j)
        if (stage_order[i] == stage_order[j])
          throw ConfigError(std::string("pipeline: stage listed twice: ") + stage_name(stage_order[i]));
  }
};

inline const std::vector<std::string>& pipeline_config_keys() {
  static const std::vector<std::string> keys{"stage_order", "enabled_stages", "model_dim", "num_heads",
                                             "n_blocks", "tau", "p", "q", "num_classes",
                                             "normalize_instances", "branch_layers", "share_branch_weights",
                                             "layer_norm"};
  return keys;
}

inline nlohmann::ordered_json to_json(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  std::vector<std::string> order;
  for (Stage s : cfg.stage_order) order.emplace_back(stage_name(s));
  std::vector<std::string> enabled;
  for (Stage s : {Stage::DAM, Stage::TAM, Stage::IAM})
    if (cfg.enabled(s)) enabled.emplace_back(stage_name(s));
  j["stage_order"] = order;
  j["enabled_stages"] = enabled;
  j["model_dim"] = cfg.model_dim;
  j["num_heads"] = cfg.num_heads;
  j["n_blocks"] = cfg.n_blocks;
  j["tau"] = cfg.tau;
  j["p"] = cfg.p;
  j["q"] = cfg.q;
  j["num_classes"] = cfg.num_classes;
  j["normalize_instances"] = cfg.normalize_instances;
  j["branch_layers"] = cfg.branch_layers;
  j["share_branch_weights"] = cfg.share_branch_weights;
  j["layer_norm"] = cfg.layer_norm;
  return j;
}

/// Overlays keys of `j` onto `cfg`. Unknown keys are rejected; an explicit
/// enabled_stages list must name exactly the stages in stage_order.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig cfg = {}) {
  if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
  const auto& keys = pipeline_config_keys();
  for (const auto& [key, _] : j.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown pipeline key: " + key);
  try {
    if (j.contains("stage_order")) {
      cfg.stage_order.clear();
      for (const auto& s : j.at("stage_order")) cfg.stage_order.push_back(parse_stage(s.get<std::string>()));
    }
    if (j.contains("model_dim")) cfg.model_dim = j.at("model_dim").get<std::size_t>();
    if (j.contains("num_heads")) cfg.num_heads = j.at("num_heads").get<std::size_t>();
    if (j.contains("n_blocks")) cfg.n_blocks = j.at("n_blocks").get<std::size_t>();
    if (j.contains("tau")) cfg.tau = j.at("tau").get<double>();
    if (j.contains("p")) cfg.p = j.at("p").get<double>();
    if (j.contains("q")) cfg.q = j.at("q").get<double>();
    if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("normalize_instances")) cfg.normalize_instances = j.at("normalize_instances").get<bool>();
    if (j.contains("branch_layers")) cfg.branch_layers = j.at("branch_layers").get<std::size_t>();
    if (j.contains("share_branch_weights")) cfg.share_branch_weights = j.at("share_branch_weights").get<bool>();
    if (j.contains("layer_norm")) cfg.layer_norm = j.at("layer_norm").get<bool>();
    if (j.contains("enabled_stages")) {
      std::vector<Stage> enabled;
      for (const auto& s : j.at("enabled_stages")) enabled.push_back(parse_stage(s.get<std::string>()));
      bool same = enabled.size() == cfg.stage_order.size();
      for (Stage s : enabled) same = same && cfg.enabled(s);
      if (!same) throw ConfigError("pipeline: stage_order must be a permutation of enabled_stages");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

struct LossBreakdown {
  double l_da = 0.0;
  double l_ia = 0.0;
  double l_ce = 0.0;
  double total = 0.0;
  std::vector<double> da_s2t, da_t2s;
  std::vector<double> ia_s2t, ia_t2s;
};

/// Parameters plus the structure that names them.
///
/// Registration order (and with it the store order) is: distribution
/// constructors for speech then text, the token-alignment stack, the
/// classifier. Disabled stages register nothing. Each module draws its
/// initial values from its own seed stream, so a module initializes the same
/// way whichever other modules are enabled.
class Model {
 public:
  Model(PipelineConfig config, std::uint64_t seed) : config_(std::move(config)), store_(seed) {
    config_.validate();
    const AttentionConfig attn = config_.attention();
    if (config_.enabled(Stage::DAM)) {
      Rng rs(derive_seed(seed, 11));
      dam_speech_ = register_distribution_constructor(store_, "dam.speech", attn, config_.branch_layers, rs);
      Rng rt(derive_seed(seed, 12));
      dam_text_ = register_distribution_constructor(store_, "dam.text", attn, config_.branch_layers, rt);
    }
    if (config_.enabled(Stage::TAM)) {
      Rng r(derive_seed(seed, 13));
      tam_ = register_token_alignment(
          store_, "tam", TokenAlignmentConfig{attn, config_.n_blocks, config_.share_branch_weights, config_.layer_norm},
          r);
    }
    Rng rc(derive_seed(seed, 14));
    classifier_weight_ = store_.add_weight("classifier.w", 2 * config_.model_dim, config_.num_classes, rc);
    classifier_bias_ = store_.add_bias("classifier.b", config_.num_classes);
  }

  const PipelineConfig& config() const { return config_; }
  const ParameterStore& parameters() const { return store_; }
  ParameterStore& parameters() { return store_; }

  const std::optional<DistributionConstructorParams>& dam_speech() const { return dam_speech_; }
  const std::optional<DistributionConstructorParams>& dam_text() const { return dam_text_; }
  const std::optional<TokenAlignmentParams>& tam() const { return tam_; }
  const std::string& classifier_weight() const { return classifier_weight_; }
  const std::string& classifier_bias() const { return classifier_bias_; }

 private:
  PipelineConfig config_;
  ParameterStore store_;
  std::optional<DistributionConstructorParams> dam_speech_, dam_text_;
  std::optional<TokenAlignmentParams> tam_;
  std::string classifier_weight_, classifier_bias_;
};

/// Graph handles produced by one forward pass.
struct ForwardPass {
  Var logits;                     // N x num_classes
  Var total;                      // 1 x 1
  std::optional<Var> l_da, l_ia;  // set when the stage ran
  Var l_ce;
  std::vector<Var> speech, text;  // running representations after all stages
  Var pooled;                     // N x 2D classifier input
  LossBreakdown breakdown;
};

/// Runs the stages in configured order over the running (speech, text)
/// sequences. DAM and IAM attach a loss and pass the sequences through; TAM
/// replaces them with the aligned pair. The classifier reads
/// concat(mean(speech), mean(text)).
inline ForwardPass forward(const Model& model, const PairBatch& batch, ParameterBinding& bind) {
  const PipelineConfig& cfg = model.config();
  if (batch.empty()) throw EmptyInputError("forward: empty batch");
  Graph& graph = bind.graph();
  const std::size_t n = batch.size();

  ForwardPass out;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LabeledPair& pair = batch[i];
    if (pair.speech.dim() != cfg.model_dim || pair.text.dim() != cfg.model_dim) {
      throw DimensionError("forward: feature dim " + std::to_string(pair.speech.dim()) + "/" +
                           std::to_string(pair.text.dim()) + " does not match model_dim " +
                           std::to_string(cfg.model_dim));
    }
    if (pair.label >= cfg.num_classes) throw DimensionError("forward: label out of range");
    labels[i] = pair.label;
    out.speech.push_back(graph.constant(pair.speech.tokens));
    out.text.push_back(graph.constant(pair.text.tokens));
  }

  for (Stage stage : cfg.stage_order) {
    switch (stage) {
      case Stage::DAM: {
        std::vector<Var> mu_s, sig_s, mu_t, sig_t;
        for (std::size_t i = 0; i < n; ++i) {
          GaussianVars gs = construct_distribution(out.speech[i], *model.dam_speech(), bind);
          GaussianVars gt = construct_distribution(out.text[i], *model.dam_text(), bind);
          mu_s.push_back(gs.mu);
          sig_s.push_back(gs.sigma);
          mu_t.push_back(gt.mu);
          sig_t.push_back(gt.sigma);
        }
        ContrastiveTerms terms;
        out.l_da = distribution_contrastive_loss(stack_rows(mu_s), stack_rows(sig_s), stack_rows(mu_t),
                                                 stack_rows(sig_t), cfg.contrastive(), &terms);
        out.breakdown.l_da = out.l_da->scalar();
        out.breakdown.da_s2t = std::move(terms.s2t);
        out.breakdown.da_t2s = std::move(terms.t2s);
        break;
      }
      case Stage::TAM: {
        for (std::size_t i = 0; i < n; ++i) {
          AlignedVars aligned = token_align(out.speech[i], out.text[i], *model.tam(), bind);
          out.speech[i] = aligned.speech;
          out.text[i] = aligned.text;
        }
        break;
      }
      case Stage::IAM: {
        std::vector<Var> vs, vt;
        for (std::size_t i = 0; i < n; ++i) {
          vs.push_back(pool_instance(out.speech[i], cfg.normalize_instances));
          vt.push_back(pool_instance(out.text[i], cfg.normalize_instances));
        }
        ContrastiveTerms terms;
        out.l_ia = instance_contrastive_loss(stack_rows(vs), stack_rows(vt), cfg.tau, &terms);
        out.breakdown.l_ia = out.l_ia->scalar();
        out.breakdown.ia_s2t = std::move(terms.s2t);
        out.breakdown.ia_t2s = std::move(terms.t2s);
        break;
      }
    }
  }

  std::vector<Var> pooled_s, pooled_t;
  for (std::size_t i = 0; i < n; ++i) {
    pooled_s.push_back(mean_rows(out.speech[i]));
    pooled_t.push_back(mean_rows(out.text[i]));
  }
  const std::array<Var, 2> halves{stack_rows(pooled_s), stack_rows(pooled_t)};
  out.pooled = concat_cols(halves);
  out.logits = linear(out.pooled, bind(model.classifier_weight()), bind(model.classifier_bias()));
  out.l_ce = cross_entropy_rows(out.logits, labels);
  out.breakdown.l_ce = out.l_ce.scalar();

  // (l_da + l_ia) + l_ce; absent terms enter as exact zeros
  Var zero = graph.constant(Tensor({1, 1}));
  Var alignment = add(out.l_da.value_or(zero), out.l_ia.value_or(zero));
  out.total = add(alignment, out.l_ce);
  out.breakdown.total = out.total.scalar();
  return out;
}

/// Argmax per row; ties go to the lowest class index.
inline std::vector<std::size_t> predict(const Tensor& logits) {
  std::vector<std::size_t> labels(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    labels[i] = best;
  }
  return labels;
}

}  // namespace mgcma
