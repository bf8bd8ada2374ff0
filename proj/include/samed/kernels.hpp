#pragma once

// Dense numeric kernels and their vector-Jacobian products.
//
// All functions are pure; they allocate their outputs and never touch shared
// state, so they can be called from any thread.

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "samed/tensor.hpp"

namespace samed {

// ---------------------------------------------------------------------------
// Layer norm over the last axis.

struct LayerNormCache {
  Tensor normalized;             // (x - mean) / sqrt(var + eps), same shape as x
  std::vector<double> inv_std;   // one per row
};

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache = nullptr);

struct LayerNormGrads {
  Tensor dx, dgamma, dbeta;
};

LayerNormGrads layer_norm_backward(const Tensor& dy, const Tensor& gamma,
                                   const LayerNormCache& cache);

// ---------------------------------------------------------------------------
// Affine map over the last axis: y = x W + b. An empty `b` means no bias.

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

struct LinearGrads {
  Tensor dx, dw, db;
};

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

// ---------------------------------------------------------------------------
// 3D convolution, stride 1, symmetric zero "same" padding, odd kernel extents.
// x: [D, H, W, Cin], kernel: [kd, kh, kw, Cin, Cout] -> [D, H, W, Cout].

Tensor conv3d(const Tensor& x, const Tensor& kernel);

struct Conv3dGrads {
  Tensor dx, dkernel;
};

Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy);

// ---------------------------------------------------------------------------
// Softmax and activations.

Tensor softmax(const Tensor& x, std::size_t axis);

double sigmoid(double x);
double gelu(double x);
double gelu_derivative(double x);

Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);

enum class Activation { gelu, sigmoid };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

Tensor activate(const Tensor& x, Activation a);
/// dy * act'(x), elementwise.
Tensor activate_backward(const Tensor& x, const Tensor& dy, Activation a);

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention without biases.

struct AttentionParams {
  std::size_t num_heads = 1;
  Tensor w_q, w_k, w_v, w_o;  // each [model_dim, model_dim]

  std::size_t model_dim() const { return w_q.rank() == 2 ? w_q.dim(0) : 0; }
  std::size_t head_dim() const { return num_heads ? model_dim() / num_heads : 0; }

  /// Throws ShapeError unless all four projections are square with equal extent
  /// divisible by `num_heads`.
  void validate() const;

  static AttentionParams identity(std::size_t model_dim, std::size_t num_heads);
  /// Entries drawn N(0, scale^2) from a seeded generator.
  static AttentionParams random(std::size_t model_dim, std::size_t num_heads,
                                std::uint64_t seed, double scale);
};

struct AttentionCache {
  Tensor q, k, v;              // projected, [Tq|Tk, model_dim]
  std::vector<Tensor> probs;   // per head, [Tq, Tk]
  Tensor context;              // concatenated head outputs before W_o, [Tq, model_dim]
};

/// q: [Tq, C], k and v: [Tk, C]. Returns [Tq, C].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionParams& params, AttentionCache* cache = nullptr);

struct AttentionGrads {
  Tensor dq, dk, dv;
  Tensor dw_q, dw_k, dw_v, dw_o;
};

AttentionGrads multi_head_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const AttentionParams& params,
                                             const AttentionCache& cache, const Tensor& dy);

// ---------------------------------------------------------------------------
// Similarity and verification helpers.

/// Norms below this are treated as zero vectors.
inline constexpr double kZeroNorm = 1e-12;

/// Cosine of the flattened tensors; 0 when either vector is (near) zero.
double cosine_similarity(const Tensor& a, const Tensor& b);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// Central-difference gradient of a scalar function, one coordinate at a time.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace samed
