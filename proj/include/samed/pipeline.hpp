#pragma once

// Deterministic stand-ins for the segmentation pipeline around the memory:
// image encoder (patch projection + temporal-adapter blocks), prompt encoder,
// memory encoder and mask decoder. None of the weights are trained; they are
// either seeded-random or set analytically so that the memory path carries
// label information the decoder can read.

#include <cstdint>
#include <span>
#include <vector>

#include "samed/memory_attention.hpp"
#include "samed/memory_base.hpp"
#include "samed/synthetic.hpp"
#include "samed/temporal_adapter.hpp"

namespace samed {

struct ModelConfig {
  std::size_t channels = 16;          // C of embeddings and memory features; the last one is the label channel
  std::size_t patch = 4;              // pixels per token edge
  std::size_t adapter_blocks = 1;
  std::size_t block_heads = 2;
  Activation adapter_activation = Activation::gelu;
  double block_scale = 0.05;          // stddev of the seeded block weights
  double pe_scale = 0.25;
  std::uint64_t seed = 7;

  double attention_temperature = 4.0; // scale of the query/key projections in memory attention
  double value_gain = 1.0;
  double mask_feature_gain = 2.0;     // label amplitude written by the memory encoder

  double feature_readout_gain = 4.0;
  double memory_readout_gain = 8.0;
  std::size_t box_margin = 3;
  double confidence_eps = 1e-6;       // IoU is clamped to [eps, 1-eps] before the logit

  void validate() const;
};

struct Encoded {
  Tensor embedding;            // E, [C, Ht, Wt]
  Tensor positional_encoding;  // PE, [C, Ht, Wt]
};

/// Sinusoidal encoding of (slice, row, col) on the first C-1 channels; the label channel stays zero.
Tensor positional_encoding(std::size_t channels, std::size_t grid_h, std::size_t grid_w, std::int64_t slice,
                           double scale);

class ImageEncoder {
 public:
  ImageEncoder(const ModelConfig& cfg, const FrameGeometry& geo);

  FeatureShape feature_shape() const { return shape_; }
  const Tensor& projection() const { return projection_; }
  std::size_t patch() const { return patch_; }

  /// Patch-mean pooling followed by the fixed projection: [Ht, Wt, C] tokens.
  Tensor project(const Frame& frame) const;

  /// Encodes the frames of one volume together (batched along B for the
  /// adapter). A standalone frame is a one-element span.
  std::vector<Encoded> encode(std::span<const Frame> frames, std::span<const BlockParams> blocks) const;

 private:
  FeatureShape shape_;
  std::size_t patch_;
  double pe_scale_;
  Tensor projection_;  // [C_img, C], last column zero
};

struct PromptEmbedding {
  BoundingBox bbox;
  Tensor embedding;  // [4 * 2 * kPromptFrequencies]
};

inline constexpr std::size_t kPromptFrequencies = 6;

/// Sinusoidal encoding of the box corners normalized by the frame size.
/// Throws for an empty/inverted box or one outside the frame.
PromptEmbedding encode_prompt(const BoundingBox& bbox, std::size_t height, std::size_t width);

/// Box prompt derived from a mask: its tight box grown by `margin` pixels and clipped to the frame.
BoundingBox box_prompt_from_mask(const Tensor& mask, std::size_t margin);

struct Prediction {
  Tensor mask;            // binary [H, W]
  double confidence = 0;  // y_hat, logit scale
  double iou = 0;         // IoU against the frame's label that produced the confidence
};

class MaskDecoder {
 public:
  MaskDecoder(Tensor readout, double bias, std::size_t patch, double confidence_eps);

  /// Token logits: readout . E_cond[:, y, x] + bias.
  Tensor logits(const Tensor& conditioned) const;

  /// mask = (logit > 0) restricted to the prompt box, tokens upsampled by patch
  /// replication. y_hat = logit(IoU(mask, frame.mask)) plus, for corrupted
  /// frames, N(0, miscalibration^2) drawn from `noise_seed`.
  Prediction predict(const Tensor& conditioned, const PromptEmbedding& prompt, const Frame& frame,
                     double miscalibration = 0.0, std::uint64_t noise_seed = 0) const;

  const Tensor& readout() const { return readout_; }
  double bias() const { return bias_; }

 private:
  Tensor readout_;  // [C]
  double bias_;
  std::size_t patch_;
  double eps_;
};

/// logit(clamp(p, eps, 1-eps))
double confidence_logit(double p, double eps);

/// The complete stub model: encoder, adapter blocks, memory attention weights,
/// memory encoder and decoder, all fixed by ModelConfig::seed.
class SegmentationModel {
 public:
  SegmentationModel(const ModelConfig& cfg, const FrameGeometry& geo);

  const ModelConfig& config() const { return cfg_; }
  const FrameGeometry& geometry() const { return geo_; }
  const ImageEncoder& encoder() const { return encoder_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }
  const FusionParams& fusion() const { return fusion_; }
  const MaskDecoder& decoder() const { return decoder_; }
  FeatureShape feature_shape() const { return encoder_.feature_shape(); }
  std::size_t label_channel() const { return cfg_.channels - 1; }

  std::vector<Encoded> encode(std::span<const Frame> frames, bool use_adapter) const;

  /// Memory encoder: E with its label channel replaced by gain * (2 * fg_fraction - 1) per token.
  Tensor mask_feature(const Tensor& embedding, const Tensor& mask) const;

 private:
  ModelConfig cfg_;
  FrameGeometry geo_;
  ImageEncoder encoder_;
  std::vector<BlockParams> blocks_;
  FusionParams fusion_;
  MaskDecoder decoder_;
};

}  // namespace samed
