#pragma once

#include <cstdint>
#include <span>

#include "samed/kernels.hpp"
#include "samed/memory_base.hpp"

namespace samed {

/// Weights of the memory-attention stack. Each layer is pre-norm
/// cross-attention with a residual connection; the same parameters are
/// reused across layers.
struct FusionParams {
  AttentionParams attn;
  Tensor ln_q_gamma, ln_q_beta;
  Tensor ln_kv_gamma, ln_kv_beta;
  std::size_t num_layers = 1;
  double ln_eps = 1e-6;

  std::size_t model_dim() const { return attn.model_dim(); }
  void validate() const;

  static FusionParams random(std::size_t model_dim, std::size_t num_heads, std::uint64_t seed,
                             double scale = 0.2);
  /// Identity projections and unit layer norms.
  static FusionParams identity(std::size_t model_dim, std::size_t num_heads = 1);
};

/// E_cond = E_new + CrossAttn(LN(E_new) + PE_new, concat_i(LN(F_i) + PE_i)).
/// Tokens are the H*W spatial positions with C channels each. An empty
/// `retrieved` list returns `embedding` unchanged.
Tensor fuse(const Tensor& embedding, const Tensor& positional_encoding,
            std::span<const MemoryFeatures> retrieved, const FusionParams& params);

/// [C,H,W] -> [H*W, C] token matrix, and back.
Tensor to_tokens(const Tensor& chw);
Tensor from_tokens(const Tensor& tokens, const FeatureShape& shape);

}  // namespace samed
