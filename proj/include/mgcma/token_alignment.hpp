#pragma once

#include <string>
#include <vector>

#include "mgcma/attention.hpp"
#include "mgcma/autograd.hpp"
#include "mgcma/parameters.hpp"

namespace mgcma {

struct TokenAlignmentConfig {
  AttentionConfig attention;
  std::size_t n_blocks = 2;
  bool share_branch_weights = false;
  bool layer_norm = false;  // row-wise normalization after each residual
};

struct TokenAlignmentBlock {
  AttentionParams speech_self;
  AttentionParams speech_cross;
  AttentionParams text_self;
  AttentionParams text_cross;
};

struct TokenAlignmentParams {
  TokenAlignmentConfig config;
  std::vector<TokenAlignmentBlock> blocks;
};

inline TokenAlignmentParams register_token_alignment(ParameterStore& store, const std::string& prefix,
                                                     const TokenAlignmentConfig& config, Rng& rng) {
  if (config.n_blocks == 0) throw ConfigError("token alignment: n_blocks must be >= 1");
  TokenAlignmentParams params{config, {}};
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    const std::string block = prefix + ".block" + std::to_string(b);
    TokenAlignmentBlock blk;
    if (config.share_branch_weights) {
      blk.speech_self = register_attention(store, block + ".self", config.attention, rng);
      blk.speech_cross = register_attention(store, block + ".cross", config.attention, rng);
      blk.text_self = blk.speech_self;
      blk.text_cross = blk.speech_cross;
    } else {
      blk.speech_self = register_attention(store, block + ".speech.self", config.attention, rng);
      blk.speech_cross = register_attention(store, block + ".speech.cross", config.attention, rng);
      blk.text_self = register_attention(store, block + ".text.self", config.attention, rng);
      blk.text_cross = register_attention(store, block + ".text.cross", config.attention, rng);
    }
    params.blocks.push_back(std::move(blk));
  }
  return params;
}

struct AlignedVars {
  Var speech;  // text-aware speech, L_s x D
  Var text;    // speech-aware text, L_t x D
};

/// Stack of blocks; each block runs self-attention per modality, then
/// cross-attention where a branch's queries come from its own self-attention
/// output and keys/values from the other branch's. Residual around every
/// sublayer.
inline AlignedVars token_align(const Var& x_speech, const Var& x_text, const TokenAlignmentParams& params,
                               ParameterBinding& bind) {
  if (x_speech.rows() == 0 || x_text.rows() == 0) throw EmptyInputError("token_align: empty sequence");
  if (x_speech.cols() != x_text.cols()) throw DimensionError("token_align: feature dims differ");
  const bool norm = params.config.layer_norm;
  auto residual = [norm](const Var& x, const Var& sub) {
    Var y = add(x, sub);
    return norm ? layer_norm_rows(y) : y;
  };

  Var s = x_speech;
  Var t = x_text;
  for (const TokenAlignmentBlock& blk : params.blocks) {
    Var s_self = residual(s, multi_head(s, s, blk.speech_self, bind));
    Var t_self = residual(t, multi_head(t, t, blk.text_self, bind));
    s = residual(s_self, multi_head(s_self, t_self, blk.speech_cross, bind));
    t = residual(t_self, multi_head(t_self, s_self, blk.text_cross, bind));
  }
  return {s, t};
}

}  // namespace mgcma
