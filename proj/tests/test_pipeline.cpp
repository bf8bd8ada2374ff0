#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "samed/kernels.hpp"
#include "samed/metrics.hpp"
#include "samed/pipeline.hpp"
#include "samed/random.hpp"

using namespace samed;

namespace {

TaskSpec make_task(double corrupt = 0.0) {
  TaskSpec t;
  t.projection_seed = 77;
  t.noise.label_corrupt_prob = corrupt;
  t.noise.feature_noise_sigma = 0.2;
  return t;
}

}  // namespace

TEST(Encoder, ZeroResidualBlocksLeaveTheProjection) {
  const ModelConfig cfg;
  const FrameGeometry geo;
  const ImageEncoder enc(cfg, geo);
  BlockConfig bc;
  bc.channels = cfg.channels;
  std::vector<BlockParams> blocks{make_block_params(bc, 1, 0.3), make_block_params(bc, 2, 0.3)};
  for (auto& b : blocks) zero_residual_branches(b);
  const auto frames = gen_volume(make_task(), 3, geo);
  const auto out = enc.encode(frames, blocks);
  ASSERT_EQ(out.size(), frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(out[i].embedding, enc.project(frames[i]).permuted({2, 0, 1})));
    EXPECT_EQ(out[i].embedding.shape(), (Shape{16, 8, 8}));
  }
}

TEST(Encoder, IdenticalFramesGiveIdenticalEmbeddings) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  Frame a = gen_frame(make_task(), 2, 5), b = a;
  b.slice_index = 6;
  const auto ea = model.encode(std::span<const Frame>(&a, 1), true);
  const auto eb = model.encode(std::span<const Frame>(&b, 1), true);
  EXPECT_TRUE(bitwise_equal(ea[0].embedding, eb[0].embedding));
  EXPECT_FALSE(bitwise_equal(ea[0].positional_encoding, eb[0].positional_encoding));
}

TEST(Encoder, SingleFrameMatchesBlockPath) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  const Frame f = gen_frame(make_task(), 1, 9);
  const FeatureShape fs = model.feature_shape();
  Tensor x = model.encoder().project(f).reshaped({1, fs.height, fs.width, fs.channels});
  for (const auto& b : model.blocks()) x = block_forward(x, b);
  const auto e = model.encode(std::span<const Frame>(&f, 1), true);
  EXPECT_TRUE(bitwise_equal(e[0].embedding, x.reshaped({fs.height, fs.width, fs.channels}).permuted({2, 0, 1})));
}

TEST(Encoder, VolumeBatchingMixesNeighbouringSlices) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  const auto vol = gen_volume(make_task(), 4);
  const auto together = model.encode(vol, true);
  const auto alone = model.encode(std::span<const Frame>(&vol[3], 1), true);
  EXPECT_GT(max_abs_diff(together[3].embedding, alone[0].embedding), 0.0);
  const auto plain_together = model.encode(vol, false);
  const auto plain_alone = model.encode(std::span<const Frame>(&vol[3], 1), false);
  EXPECT_TRUE(bitwise_equal(plain_together[3].embedding, plain_alone[0].embedding));
}

TEST(Encoder, PositionalEncodingLeavesLabelChannelEmpty) {
  const Tensor pe = positional_encoding(16, 8, 8, 3, 0.25);
  for (std::size_t i = 15 * 64; i < 16 * 64; ++i) EXPECT_EQ(pe[i], 0.0);
  for (double v : pe.data()) EXPECT_LE(std::abs(v), 0.25);
  EXPECT_FALSE(bitwise_equal(pe, positional_encoding(16, 8, 8, 4, 0.25)));
}

TEST(Prompt, FullFrameBoxIsCanonical) {
  const PromptEmbedding p = encode_prompt({0, 0, 32, 32}, 32, 32);
  ASSERT_EQ(p.embedding.size(), 4 * 2 * kPromptFrequencies);
  for (std::size_t corner = 0; corner < 4; ++corner)
    for (std::size_t k = 0; k < kPromptFrequencies; ++k) {
      const double s = p.embedding[(corner * kPromptFrequencies + k) * 2];
      const double c = p.embedding[(corner * kPromptFrequencies + k) * 2 + 1];
      EXPECT_NEAR(s, 0.0, 1e-13);
      // origin corners give cos 0 = 1; far corners give cos(2^k pi) = -1 for k = 0, else 1
      EXPECT_NEAR(c, (corner >= 2 && k == 0) ? -1.0 : 1.0, 1e-13);
    }
  EXPECT_TRUE(bitwise_equal(p.embedding, encode_prompt({0, 0, 32, 32}, 32, 32).embedding));
}

TEST(Prompt, InvalidBoxesRejected) {
  EXPECT_THROW(encode_prompt({5, 0, 5, 4}, 8, 8), Error);
  EXPECT_THROW(encode_prompt({6, 0, 5, 4}, 8, 8), Error);
  EXPECT_THROW(encode_prompt({0, 0, 9, 4}, 8, 8), Error);
  EXPECT_THROW(box_prompt_from_mask(Tensor(Shape{4, 4}), 1), Error);
}

TEST(Prompt, NoCollisionsOnSixteenGrid) {
  std::set<std::vector<double>> seen;
  std::size_t boxes = 0;
  for (std::size_t x0 = 0; x0 < 16; ++x0)
    for (std::size_t x1 = x0 + 1; x1 <= 16; ++x1)
      for (std::size_t y0 = 0; y0 < 16; ++y0)
        for (std::size_t y1 = y0 + 1; y1 <= 16; ++y1) {
          const BoundingBox b{x0, y0, x1, y1};
          const Tensor e = encode_prompt(b, 16, 16).embedding;
          seen.insert(e.values());
          ++boxes;
          if (x1 < 16) {
            const Tensor moved = encode_prompt({x0, y0, x1 + 1, y1}, 16, 16).embedding;
            ASSERT_GT(max_abs_diff(e, moved), 1e-3);
          }
          if (y0 + 1 < y1) {
            const Tensor moved = encode_prompt({x0, y0 + 1, x1, y1}, 16, 16).embedding;
            ASSERT_GT(max_abs_diff(e, moved), 1e-3);
          }
        }
  EXPECT_EQ(boxes, 136u * 136u);
  EXPECT_EQ(seen.size(), boxes);
}

TEST(Prompt, BoxFromMaskAddsClippedMargin) {
  Tensor m(Shape{10, 10});
  m[1 * 10 + 2] = 1;
  m[4 * 10 + 8] = 1;
  const BoundingBox b = box_prompt_from_mask(m, 3);
  EXPECT_EQ(b, (BoundingBox{0, 0, 10, 8}));
}

namespace {

// E_cond whose label channel holds +-amp on the tokens of a patch-aligned mask.
Tensor label_only_embedding(const SegmentationModel& model, const Tensor& token_mask, double amp) {
  const FeatureShape fs = model.feature_shape();
  Tensor e(fs.as_shape());
  const std::size_t hw = fs.height * fs.width;
  for (std::size_t i = 0; i < hw; ++i) e[model.label_channel() * hw + i] = token_mask[i] ? amp : -amp;
  return e;
}

}  // namespace

TEST(Decoder, PerfectMaskChannelPassesThrough) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  Tensor tokens(Shape{8, 8});
  Frame f;
  f.mask = Tensor(Shape{32, 32});
  for (std::size_t ty = 2; ty < 5; ++ty)
    for (std::size_t tx = 1; tx < 4; ++tx) tokens[ty * 8 + tx] = 1;
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) f.mask[y * 32 + x] = tokens[(y / 4) * 8 + x / 4];
  const auto prompt = encode_prompt(box_prompt_from_mask(f.mask, 3), 32, 32);
  const Prediction p = model.decoder().predict(label_only_embedding(model, tokens, 100.0), prompt, f);
  EXPECT_EQ(p.mask, f.mask);
  EXPECT_EQ(p.iou, 1.0);
  EXPECT_NEAR(p.confidence, std::log((1 - 1e-6) / 1e-6), 1e-9);
}

TEST(Decoder, EmptyPredictionHitsTheFloor) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  Frame f;
  f.mask = Tensor(Shape{32, 32});
  f.mask[100] = 1;
  const auto prompt = encode_prompt({0, 0, 32, 32}, 32, 32);
  const Prediction p = model.decoder().predict(label_only_embedding(model, Tensor(Shape{8, 8}), 100.0), prompt, f);
  EXPECT_EQ(std::count(p.mask.data().begin(), p.mask.data().end(), 1.0), 0);
  EXPECT_EQ(p.iou, 0.0);
  EXPECT_NEAR(p.confidence, std::log(1e-6 / (1 - 1e-6)), 1e-9);
}

TEST(Decoder, MaskStaysInsidePromptBox) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  Frame f;
  f.mask = Tensor(Shape{32, 32});
  const auto prompt = encode_prompt({4, 8, 12, 20}, 32, 32);
  Tensor all(Shape{8, 8}, 1.0);
  const Prediction p = model.decoder().predict(label_only_embedding(model, all, 100.0), prompt, f);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      EXPECT_EQ(p.mask[y * 32 + x], (x >= 4 && x < 12 && y >= 8 && y < 20) ? 1.0 : 0.0);
}

TEST(Decoder, HonestConfidenceIsTheIoU) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  Rng rng(21);
  std::size_t interior = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const auto vol = gen_volume(make_task(0.5), s);
    for (std::size_t i = 0; i < vol.size(); ++i) {
      Tensor tokens(Shape{8, 8});
      for (auto& v : tokens.data()) v = std::bernoulli_distribution(0.5)(rng);
      const auto prompt = encode_prompt(box_prompt_from_mask(vol[i].mask, 3), 32, 32);
      const Prediction p = model.decoder().predict(label_only_embedding(model, tokens, 50.0), prompt, vol[i], 0.0, s);
      EXPECT_DOUBLE_EQ(p.iou, iou(p.mask, vol[i].mask));
      const double clamped = std::clamp(p.iou, 1e-6, 1 - 1e-6);
      EXPECT_NEAR(sigmoid(p.confidence), clamped, 1e-9);
      interior += p.iou > 1e-6 && p.iou < 1 - 1e-6;
    }
  }
  EXPECT_GT(interior, 200u);
}

TEST(Decoder, MiscalibrationOnlyTouchesCorruptedFrames) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  const auto vol = gen_volume(make_task(0.5), 3);
  const auto enc = model.encode(vol, true);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    const auto prompt = encode_prompt(box_prompt_from_mask(vol[i].mask, 3), 32, 32);
    const Prediction honest = model.decoder().predict(enc[i].embedding, prompt, vol[i], 0.0, 1);
    const Prediction noisy = model.decoder().predict(enc[i].embedding, prompt, vol[i], 2.0, 1);
    EXPECT_EQ(honest.mask, noisy.mask);
    if (vol[i].is_corrupted) EXPECT_NE(honest.confidence, noisy.confidence);
    else EXPECT_EQ(honest.confidence, noisy.confidence);
    EXPECT_EQ(noisy.confidence, model.decoder().predict(enc[i].embedding, prompt, vol[i], 2.0, 1).confidence);
  }
}

TEST(MemoryEncoder, WritesSignedForegroundFraction) {
  const SegmentationModel model(ModelConfig{}, FrameGeometry{});
  const Frame f = gen_frame(make_task(), 0, 0);
  const auto e = model.encode(std::span<const Frame>(&f, 1), false);
  Tensor mask(Shape{32, 32});
  for (std::size_t x = 0; x < 2; ++x) mask[x] = 1;  // 2 of the 16 pixels of token 0
  const Tensor feat = model.mask_feature(e[0].embedding, mask);
  const std::size_t hw = 64, lab = model.label_channel();
  EXPECT_DOUBLE_EQ(feat[lab * hw + 0], 2.0 * (2.0 * (2.0 / 16) - 1));
  EXPECT_DOUBLE_EQ(feat[lab * hw + 1], -2.0);
  for (std::size_t i = 0; i < lab * hw; ++i) ASSERT_EQ(feat[i], e[0].embedding[i]);
}
