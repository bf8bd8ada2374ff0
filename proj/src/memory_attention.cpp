#include "samed/memory_attention.hpp"

#include "samed/random.hpp"

namespace samed {

void FusionParams::validate() const {
  attn.validate();
  const Shape d{model_dim()};
  for (const Tensor* t : {&ln_q_gamma, &ln_q_beta, &ln_kv_gamma, &ln_kv_beta}) {
    if (t->shape() != d) throw ShapeError("fusion layer-norm parameter", t->shape(), d);
  }
  if (num_layers == 0) throw Error("fusion requires num_layers >= 1");
}

FusionParams FusionParams::random(std::size_t model_dim, std::size_t num_heads, std::uint64_t seed, double scale) {
  FusionParams p;
  p.attn = AttentionParams::random(model_dim, num_heads, seed, scale);
  p.ln_q_gamma = Tensor(Shape{model_dim}, 1.0);
  p.ln_q_beta = Tensor(Shape{model_dim}, 0.0);
  p.ln_kv_gamma = Tensor(Shape{model_dim}, 1.0);
  p.ln_kv_beta = Tensor(Shape{model_dim}, 0.0);
  return p;
}

FusionParams FusionParams::identity(std::size_t model_dim, std::size_t num_heads) {
  FusionParams p;
  p.attn = AttentionParams::identity(model_dim, num_heads);
  p.ln_q_gamma = Tensor(Shape{model_dim}, 1.0);
  p.ln_q_beta = Tensor(Shape{model_dim}, 0.0);
  p.ln_kv_gamma = Tensor(Shape{model_dim}, 1.0);
  p.ln_kv_beta = Tensor(Shape{model_dim}, 0.0);
  return p;
}

Tensor to_tokens(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("expected a [C,H,W] tensor, got " + shape_to_string(chw.shape()));
  const std::size_t c = chw.dim(0), hw = chw.dim(1) * chw.dim(2);
  return chw.reshaped({c, hw}).permuted({1, 0});
}

Tensor from_tokens(const Tensor& tokens, const FeatureShape& shape) {
  if (tokens.shape() != Shape{shape.height * shape.width, shape.channels}) {
    throw ShapeError("token matrix", tokens.shape(), Shape{shape.height * shape.width, shape.channels});
  }
  return tokens.permuted({1, 0}).reshaped(shape.as_shape());
}

Tensor fuse(const Tensor& embedding, const Tensor& positional_encoding, std::span<const MemoryFeatures> retrieved,
            const FusionParams& params) {
  if (embedding.rank() != 3) {
    throw ShapeError("fusion embedding must be [C,H,W], got " + shape_to_string(embedding.shape()));
  }
  if (positional_encoding.shape() != embedding.shape()) {
    throw ShapeError("fusion positional encoding", positional_encoding.shape(), embedding.shape());
  }
  const FeatureShape fs{embedding.dim(0), embedding.dim(1), embedding.dim(2)};
  for (const auto& m : retrieved) {
    if (m.mask_feature.shape() != embedding.shape()) {
      throw ShapeError("memory feature vs query embedding", m.mask_feature.shape(), embedding.shape());
    }
    if (m.positional_encoding.shape() != embedding.shape()) {
      throw ShapeError("memory positional encoding vs query embedding", m.positional_encoding.shape(),
                       embedding.shape());
    }
  }
  if (retrieved.empty()) return embedding;

  params.validate();
  if (params.model_dim() != fs.channels) {
    throw ShapeError("fusion model_dim vs channels", Shape{params.model_dim()}, embedding.shape());
  }

  const std::size_t hw = fs.height * fs.width;
  const std::size_t c = fs.channels;
  Tensor memory(Shape{hw * retrieved.size(), c});
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    Tensor kv = layer_norm(to_tokens(retrieved[i].mask_feature), params.ln_kv_gamma, params.ln_kv_beta, params.ln_eps);
    kv += to_tokens(retrieved[i].positional_encoding);
    std::copy(kv.data().begin(), kv.data().end(), memory.data().begin() + static_cast<std::ptrdiff_t>(i * hw * c));
  }

  const Tensor pe = to_tokens(positional_encoding);
  Tensor x = to_tokens(embedding);
  for (std::size_t layer = 0; layer < params.num_layers; ++layer) {
    Tensor q = layer_norm(x, params.ln_q_gamma, params.ln_q_beta, params.ln_eps);
    q += pe;
    x += multi_head_attention(q, memory, memory, params.attn);
  }
  return from_tokens(x, fs);
}

}  // namespace samed
