#pragma once

// Transformer block with a temporal adapter after spatial attention:
//
//   x_attn = MHA(LN1(x))                       (per frame, H*W tokens)
//   x_temp = x_attn + W_up act(Conv3D(W_down LN_a(x_attn)))
//   x_out  = x + DropPath(x_temp)
//   y      = x_out + MLP(LN2(x_out))
//
// Tensors are laid out [B, H, W, C] where B is the depth/temporal axis.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "samed/kernels.hpp"

namespace samed {

struct AdapterParams {
  Tensor ln_gamma, ln_beta;   // [C]
  Tensor w_down;              // [C, r]
  Tensor conv_kernel;         // [kd, kh, kw, r, r]
  Tensor w_up;                // [r, C]
  Activation activation = Activation::gelu;
  double ln_eps = 1e-6;

  std::size_t channels() const { return w_down.rank() == 2 ? w_down.dim(0) : 0; }
  std::size_t bottleneck() const { return w_down.rank() == 2 ? w_down.dim(1) : 0; }
  void validate() const;
};

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionParams attn;
  AdapterParams adapter;
  Tensor ln2_gamma, ln2_beta;
  Tensor mlp_w1, mlp_b1;  // [C, hidden], [hidden]
  Tensor mlp_w2, mlp_b2;  // [hidden, C], [C]
  double drop_path_rate = 0.0;
  double ln_eps = 1e-6;

  std::size_t channels() const { return ln1_gamma.size(); }
  void validate() const;
};

struct BlockConfig {
  std::size_t channels = 16;
  std::size_t bottleneck = 0;   // 0 selects channels / 4
  std::size_t num_heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t conv_depth = 3;   // kd
  std::size_t conv_height = 1;  // kh
  std::size_t conv_width = 1;   // kw
  Activation activation = Activation::gelu;
  double drop_path_rate = 0.0;
};

/// Unit layer norms, N(0, scale^2) weights, zero MLP biases.
BlockParams make_block_params(const BlockConfig& cfg, std::uint64_t seed, double scale);

/// Zeroes W_o, the adapter's W_up and the MLP output layer, which turns the block into the identity.
void zero_residual_branches(BlockParams& p);

/// Visits every learnable tensor under a stable dotted name ("attn.w_q", "adapter.w_up", ...).
void for_each_param(BlockParams& p, const std::function<void(std::string_view, Tensor&)>& fn);
void for_each_param(const BlockParams& p, const std::function<void(std::string_view, const Tensor&)>& fn);

struct EvalMode {};
struct TrainMode {
  std::uint64_t seed = 0;
};
using BlockMode = std::variant<EvalMode, TrainMode>;

Tensor adapter_forward(const Tensor& x_attn, const AdapterParams& p);

Tensor block_forward(const Tensor& x, const BlockParams& p, BlockMode mode = EvalMode{});

/// Multiplier applied to the adapter branch by DropPath: 0, 1/(1-rate) or 1 (eval).
double drop_path_scale(double rate, BlockMode mode);

struct BlockGradients {
  Tensor dx;
  BlockParams dparams;  // same layout as the parameters
};

/// Analytic gradients of <upstream, block_forward(x, p, eval)> w.r.t. x and all parameters.
BlockGradients block_backward(const Tensor& x, const BlockParams& p, const Tensor& upstream);

struct ParamCheck {
  std::string name;
  std::size_t count = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<ParamCheck> params;  // "x" first, then parameters in visitation order
  bool passed = true;
};

struct GradCheckOptions {
  double h = 1e-6;
  double tol = 1e-5;
  std::uint64_t upstream_seed = 0;
  /// Scales the analytic gradient of one parameter by 1.1 before comparison.
  /// Accepts a full dotted name or its last component ("w_up").
  std::optional<std::string> mutate;
  /// Finite differences through a long-double copy of the forward pass. In
  /// plain double, rounding in the forward pass leaves ~1e-8 of noise in
  /// h=1e-6 differences, which swamps a 1e-5 relative tolerance on small entries.
  bool extended_precision = true;
};

/// |a-b| / max(1e-8, |a|+|b|)
double relative_error(double a, double b);

/// Eval-mode forward evaluated in long double and rounded back; an independent check on block_forward.
Tensor reference_block_forward(const BlockParams& p, const Tensor& x);

GradCheckReport grad_check(const BlockParams& p, const Tensor& x, const GradCheckOptions& opts = {});

}  // namespace samed
