#include "samed/pipeline.hpp"

#include <cmath>
#include <numbers>

#include "samed/metrics.hpp"
#include "samed/random.hpp"

namespace samed {

void ModelConfig::validate() const {
  if (channels < 4) throw Error("model channels must be >= 4");
  if (patch == 0) throw Error("patch must be >= 1");
  if (block_heads == 0 || channels % block_heads != 0) throw Error("channels must be divisible by block_heads");
  if (!(pe_scale >= 0.0)) throw Error("pe_scale must be >= 0");
  if (!(confidence_eps > 0.0 && confidence_eps < 0.5)) throw Error("confidence_eps must lie in (0, 0.5)");
}

Tensor positional_encoding(std::size_t channels, std::size_t grid_h, std::size_t grid_w, std::int64_t slice,
                           double scale) {
  Tensor pe(Shape{channels, grid_h, grid_w});
  if (channels < 2) return pe;
  const std::size_t used = channels - 1;
  for (std::size_t c = 0; c < used; ++c) {
    const std::size_t axis = c % 3;       // 0: slice, 1: row, 2: col
    const std::size_t j = c / 3;
    const std::size_t freq = j / 2;
    const double omega = std::pow(10000.0, -2.0 * static_cast<double>(freq) / static_cast<double>(used));
    for (std::size_t y = 0; y < grid_h; ++y)
      for (std::size_t x = 0; x < grid_w; ++x) {
        const double pos = axis == 0 ? static_cast<double>(slice) : axis == 1 ? static_cast<double>(y)
                                                                               : static_cast<double>(x);
        const double v = (j % 2 == 0) ? std::sin(omega * pos) : std::cos(omega * pos);
        pe[(c * grid_h + y) * grid_w + x] = scale * v;
      }
  }
  return pe;
}

// ---------------------------------------------------------------------------

ImageEncoder::ImageEncoder(const ModelConfig& cfg, const FrameGeometry& geo)
    : patch_(cfg.patch), pe_scale_(cfg.pe_scale) {
  cfg.validate();
  if (geo.height % cfg.patch != 0 || geo.width % cfg.patch != 0) {
    throw ShapeError("frame size must be divisible by the patch size", Shape{geo.height, geo.width}, Shape{cfg.patch});
  }
  shape_ = {cfg.channels, geo.height / cfg.patch, geo.width / cfg.patch};
  Rng rng(mix_seed(cfg.seed, 0xe1c));
  const double sd = 1.0 / std::sqrt(static_cast<double>(geo.channels));
  projection_ = Tensor(Shape{geo.channels, cfg.channels});
  std::normal_distribution<double> d(0.0, sd);
  for (std::size_t i = 0; i < geo.channels; ++i)
    for (std::size_t j = 0; j + 1 < cfg.channels; ++j) projection_[i * cfg.channels + j] = d(rng);
}

Tensor ImageEncoder::project(const Frame& frame) const {
  const Tensor& f = frame.features;
  if (f.rank() != 3 || f.dim(2) != projection_.dim(0)) {
    throw ShapeError("frame features", f.shape(), Shape{0, 0, projection_.dim(0)});
  }
  const std::size_t gh = shape_.height, gw = shape_.width, ci = f.dim(2);
  if (f.dim(0) != gh * patch_ || f.dim(1) != gw * patch_) {
    throw ShapeError("frame size vs encoder grid", f.shape(), Shape{gh * patch_, gw * patch_, ci});
  }
  Tensor pooled(Shape{gh, gw, ci});
  const double inv = 1.0 / static_cast<double>(patch_ * patch_);
  for (std::size_t y = 0; y < f.dim(0); ++y)
    for (std::size_t x = 0; x < f.dim(1); ++x) {
      const double* px = f.data().data() + (y * f.dim(1) + x) * ci;
      double* out = pooled.data().data() + ((y / patch_) * gw + x / patch_) * ci;
      for (std::size_t k = 0; k < ci; ++k) out[k] += px[k] * inv;
    }
  return linear(pooled, projection_);
}

std::vector<Encoded> ImageEncoder::encode(std::span<const Frame> frames, std::span<const BlockParams> blocks) const {
  const std::size_t b = frames.size();
  const std::size_t gh = shape_.height, gw = shape_.width, c = shape_.channels;
  const std::size_t per = gh * gw * c;
  Tensor x(Shape{b, gh, gw, c});
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor tok = project(frames[i]);
    std::copy(tok.data().begin(), tok.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  for (const auto& blk : blocks) x = block_forward(x, blk, EvalMode{});

  std::vector<Encoded> out;
  out.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto begin = x.data().begin() + static_cast<std::ptrdiff_t>(i * per);
    Tensor hwc(Shape{gh, gw, c}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(per)));
    out.push_back({hwc.permuted({2, 0, 1}),
                   positional_encoding(c, gh, gw, frames[i].slice_index, pe_scale_)});
  }
  return out;
}

// ---------------------------------------------------------------------------

PromptEmbedding encode_prompt(const BoundingBox& b, std::size_t height, std::size_t width) {
  if (b.x0 >= b.x1 || b.y0 >= b.y1) throw Error("prompt box is empty or inverted");
  if (b.x1 > width || b.y1 > height) throw Error("prompt box exceeds the frame");
  const double coords[4] = {static_cast<double>(b.x0) / static_cast<double>(width),
                            static_cast<double>(b.y0) / static_cast<double>(height),
                            static_cast<double>(b.x1) / static_cast<double>(width),
                            static_cast<double>(b.y1) / static_cast<double>(height)};
  PromptEmbedding p{b, Tensor(Shape{4 * 2 * kPromptFrequencies})};
  std::size_t i = 0;
  for (double v : coords)
    for (std::size_t k = 0; k < kPromptFrequencies; ++k) {
      const double a = std::ldexp(std::numbers::pi, static_cast<int>(k)) * v;
      p.embedding[i++] = std::sin(a);
      p.embedding[i++] = std::cos(a);
    }
  return p;
}

BoundingBox box_prompt_from_mask(const Tensor& mask, std::size_t margin) {
  const auto tight = mask_bbox(mask);
  if (!tight) throw Error("cannot derive a box prompt from an empty mask");
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  return {tight->x0 > margin ? tight->x0 - margin : 0, tight->y0 > margin ? tight->y0 - margin : 0,
          std::min(w, tight->x1 + margin), std::min(h, tight->y1 + margin)};
}

double confidence_logit(double p, double eps) {
  const double q = std::clamp(p, eps, 1.0 - eps);
  return std::log(q / (1.0 - q));
}

MaskDecoder::MaskDecoder(Tensor readout, double bias, std::size_t patch, double confidence_eps)
    : readout_(std::move(readout)), bias_(bias), patch_(patch), eps_(confidence_eps) {}

Tensor MaskDecoder::logits(const Tensor& cond) const {
  if (cond.rank() != 3 || cond.dim(0) != readout_.size()) {
    throw ShapeError("decoder input", cond.shape(), Shape{readout_.size(), 0, 0});
  }
  const std::size_t c = cond.dim(0), hw = cond.dim(1) * cond.dim(2);
  Tensor out(Shape{cond.dim(1), cond.dim(2)}, bias_);
  for (std::size_t k = 0; k < c; ++k) {
    const double w = readout_[k];
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < hw; ++i) out[i] += w * cond[k * hw + i];
  }
  return out;
}

Prediction MaskDecoder::predict(const Tensor& cond, const PromptEmbedding& prompt, const Frame& frame,
                                double miscalibration, std::uint64_t noise_seed) const {
  const Tensor lg = logits(cond);
  const std::size_t h = frame.height(), w = frame.width();
  if (lg.dim(0) * patch_ != h || lg.dim(1) * patch_ != w) {
    throw ShapeError("decoder grid vs frame", lg.shape(), frame.mask.shape());
  }
  const BoundingBox& b = prompt.bbox;
  Prediction p;
  p.mask = Tensor(Shape{h, w});
  for (std::size_t y = b.y0; y < std::min(b.y1, h); ++y)
    for (std::size_t x = b.x0; x < std::min(b.x1, w); ++x) {
      if (lg[(y / patch_) * lg.dim(1) + x / patch_] > 0.0) p.mask[y * w + x] = 1.0;
    }
  p.iou = iou(p.mask, frame.mask);
  p.confidence = confidence_logit(p.iou, eps_);
  if (frame.is_corrupted && miscalibration > 0.0) {
    Rng rng(noise_seed);
    std::normal_distribution<double> n(0.0, miscalibration);
    p.confidence += n(rng);
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

FusionParams label_fusion(const ModelConfig& cfg) {
  const std::size_t c = cfg.channels, label = c - 1;
  FusionParams f = FusionParams::identity(c, 1);
  f.attn.w_q *= cfg.attention_temperature;
  f.attn.w_q[label * c + label] = 0.0;
  f.attn.w_k = f.attn.w_q;
  f.attn.w_v = Tensor(Shape{c, c});
  f.attn.w_v[label * c + label] = 1.0;
  f.attn.w_o = Tensor(Shape{c, c});
  f.attn.w_o[label * c + label] = cfg.value_gain;
  return f;
}

// Fixed read-out that scores tokens along the shared foreground-vs-background
// direction, plus a weight on the label channel written by memory attention.
MaskDecoder make_decoder(const ModelConfig& cfg, const FrameGeometry& geo, const Tensor& projection) {
  const SharedAppearance shared = shared_appearance(geo);
  const std::size_t ci = geo.channels, c = cfg.channels;
  Tensor diff(Shape{ci}), mid(Shape{ci});
  for (std::size_t k = 0; k < ci; ++k) {
    diff[k] = shared.fg[k] - shared.bg[k];
    mid[k] = 0.5 * geo.shared_weight * (shared.fg[k] + shared.bg[k]);
  }
  const Tensor d = linear(diff.reshaped({1, ci}), projection).reshaped({c});
  const Tensor m = linear(mid.reshaped({1, ci}), projection).reshaped({c});
  const double dd = dot(d.data(), d.data());
  Tensor readout(Shape{c});
  double bias = 0.0;
  if (dd > 0.0 && geo.shared_weight > 0.0) {
    const double s = cfg.feature_readout_gain / (geo.shared_weight * dd);
    for (std::size_t k = 0; k < c; ++k) readout[k] = s * d[k];
    bias = -dot(readout.data(), m.data());
  }
  readout[c - 1] = cfg.memory_readout_gain;
  return MaskDecoder(std::move(readout), bias, cfg.patch, cfg.confidence_eps);
}

std::vector<BlockParams> make_blocks(const ModelConfig& cfg) {
  std::vector<BlockParams> blocks;
  BlockConfig bc;
  bc.channels = cfg.channels;
  bc.num_heads = cfg.block_heads;
  bc.activation = cfg.adapter_activation;
  for (std::size_t i = 0; i < cfg.adapter_blocks; ++i) {
    blocks.push_back(make_block_params(bc, mix_seed(cfg.seed, 0xb10c + i), cfg.block_scale));
  }
  return blocks;
}

}  // namespace

SegmentationModel::SegmentationModel(const ModelConfig& cfg, const FrameGeometry& geo)
    : cfg_(cfg),
      geo_(geo),
      encoder_(cfg, geo),
      blocks_(make_blocks(cfg)),
      fusion_(label_fusion(cfg)),
      decoder_(make_decoder(cfg, geo, encoder_.projection())) {}

std::vector<Encoded> SegmentationModel::encode(std::span<const Frame> frames, bool use_adapter) const {
  if (use_adapter) return encoder_.encode(frames, blocks_);
  return encoder_.encode(frames, {});
}

Tensor SegmentationModel::mask_feature(const Tensor& embedding, const Tensor& mask) const {
  const FeatureShape fs = feature_shape();
  if (embedding.shape() != fs.as_shape()) throw ShapeError("memory encoder embedding", embedding.shape(), fs.as_shape());
  const std::size_t p = cfg_.patch;
  if (mask.shape() != Shape{fs.height * p, fs.width * p}) {
    throw ShapeError("memory encoder mask", mask.shape(), Shape{fs.height * p, fs.width * p});
  }
  Tensor f = embedding;
  const std::size_t hw = fs.height * fs.width;
  const double inv = 1.0 / static_cast<double>(p * p);
  double* label = f.data().data() + label_channel() * hw;
  std::fill(label, label + hw, 0.0);
  for (std::size_t y = 0; y < fs.height * p; ++y)
    for (std::size_t x = 0; x < fs.width * p; ++x)
      label[(y / p) * fs.width + x / p] += mask[y * fs.width * p + x] * inv;
  for (std::size_t i = 0; i < hw; ++i) label[i] = cfg_.mask_feature_gain * (2.0 * label[i] - 1.0);
  return f;
}

}  // namespace samed
