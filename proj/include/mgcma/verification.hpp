#pragma once

#include <string>
#include <vector>

#include "mgcma/data_io.hpp"
#include "mgcma/grad_check.hpp"
#include "mgcma/pipeline.hpp"

namespace mgcma {

struct GradCheckCase {
  std::string name;
  GradCheckResult result;
};

struct GradCheckSuiteConfig {
  std::uint64_t seed = 0;
  std::size_t model_dim = 16;
  std::size_t num_heads = 2;
  std::size_t n_blocks = 1;
  std::size_t batch = 3;
  std::size_t len_speech = 4;
  std::size_t len_text = 3;
  double tau = 0.07;
  double h = 1e-4;
};

/// Finite-difference checks of every loss on small seeded models:
/// L_DA (distribution constructors + loss), L_IA (token alignment + instance
/// loss), L_CE and the total loss of the full three-stage model.
inline std::vector<GradCheckCase> run_grad_check_suite(const GradCheckSuiteConfig& cfg) {
  SyntheticConfig data_cfg;
  data_cfg.n_pairs = cfg.batch;
  data_cfg.n_classes = std::min<std::size_t>(cfg.batch, 4);
  data_cfg.dim = cfg.model_dim;
  data_cfg.len_speech = cfg.len_speech;
  data_cfg.len_text = cfg.len_text;
  data_cfg.separation = 1.0;
  data_cfg.seed = derive_seed(cfg.seed, 7);
  const std::vector<LabeledPair> pairs = generate_synthetic_pairs(data_cfg);
  const PairBatch batch = PairBatch::of(pairs);

  auto make_config = [&](std::vector<Stage> order) {
    PipelineConfig p;
    p.stage_order = std::move(order);
    p.model_dim = cfg.model_dim;
    p.num_heads = cfg.num_heads;
    p.n_blocks = cfg.n_blocks;
    p.tau = cfg.tau;
    return p;
  };

  struct Spec {
    std::string name;
    std::vector<Stage> order;
    Var ForwardPass::*term;
    bool optional_term;
    std::optional<Var> ForwardPass::*opt;
  };
  using enum Stage;
  const std::vector<Spec> specs{
      {"L_DA", {DAM}, nullptr, true, &ForwardPass::l_da},
      {"L_IA", {TAM, IAM}, nullptr, true, &ForwardPass::l_ia},
      {"L_CE", {DAM, TAM, IAM}, &ForwardPass::l_ce, false, nullptr},
      {"total", {DAM, TAM, IAM}, &ForwardPass::total, false, nullptr},
  };

  std::vector<GradCheckCase> out;
  for (const Spec& spec : specs) {
    Model model(make_config(spec.order), derive_seed(cfg.seed, out.size()));
    GradCheckResult r = grad_check(
        model.parameters(),
        [&](Graph&, ParameterBinding& bind) {
          ForwardPass pass = forward(model, batch, bind);
          return spec.optional_term ? *(pass.*spec.opt) : pass.*spec.term;
        },
        cfg.h);
    out.push_back({spec.name, r});
  }
  return out;
}

}  // namespace mgcma
