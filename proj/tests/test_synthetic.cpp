#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "samed/metrics.hpp"
#include "samed/random.hpp"
#include "samed/synthetic.hpp"

using namespace samed;

namespace {

Tensor mask_from(std::size_t h, std::size_t w, std::initializer_list<std::size_t> on) {
  Tensor m(Shape{h, w});
  for (auto i : on) m[i] = 1.0;
  return m;
}

bool frames_equal(const Frame& a, const Frame& b) {
  return bitwise_equal(a.features, b.features) && bitwise_equal(a.mask, b.mask) && a.slice_index == b.slice_index &&
         a.is_corrupted == b.is_corrupted && a.task_id == b.task_id && a.volume_id == b.volume_id;
}

TaskSpec task(double corrupt = 0.0, ShapeFamily fam = ShapeFamily::ellipse) {
  TaskSpec t;
  t.task_id = 3;
  t.modality_tag = "ct";
  t.projection_seed = 1234;
  t.shape_family = fam;
  t.noise.label_corrupt_prob = corrupt;
  t.noise.feature_noise_sigma = 0.1;
  return t;
}

}  // namespace

TEST(Metrics, Examples) {
  const Tensor a = mask_from(2, 4, {0, 1, 2, 3});
  EXPECT_EQ(dice(a, a), 1.0);
  EXPECT_EQ(iou(a, a), 1.0);
  const Tensor b = mask_from(2, 4, {4, 5, 6, 7});
  EXPECT_EQ(dice(a, b), 0.0);
  EXPECT_EQ(iou(a, b), 0.0);
  const Tensor c = mask_from(2, 4, {2, 3, 4, 5});
  EXPECT_EQ(dice(a, c), 0.5);
  EXPECT_EQ(iou(a, c), 1.0 / 3.0);
}

TEST(Metrics, BothEmptyIsPerfect) {
  const Tensor z(Shape{3, 3});
  EXPECT_EQ(dice(z, z), 1.0);
  EXPECT_EQ(iou(z, z), 1.0);
  EXPECT_EQ(dice(z, mask_from(3, 3, {4})), 0.0);
}

TEST(Metrics, RejectsBadInput) {
  Tensor m = mask_from(2, 2, {0});
  m[1] = 2.0;
  EXPECT_THROW(dice(m, m), Error);
  EXPECT_THROW(iou(mask_from(2, 2, {}), mask_from(2, 3, {})), ShapeError);
}

TEST(Metrics, RandomPairIdentities) {
  Rng rng(17);
  for (int t = 0; t < 1000; ++t) {
    const double pa = std::uniform_real_distribution<double>(0, 1)(rng);
    const double pb = std::uniform_real_distribution<double>(0, 1)(rng);
    Tensor a(Shape{6, 7}), b(Shape{6, 7});
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = std::bernoulli_distribution(pa)(rng);
      b[i] = std::bernoulli_distribution(pb)(rng);
    }
    const double d = dice(a, b), j = iou(a, b);
    EXPECT_NEAR(d, 2 * j / (1 + j), 1e-12);
    EXPECT_GE(d, j);
    EXPECT_EQ(d, dice(b, a));
    EXPECT_EQ(j, iou(b, a));
    EXPECT_GE(j, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(Generator, Deterministic) {
  const TaskSpec tk = task(0.5);
  for (std::int64_t t = 0; t < 8; ++t) EXPECT_TRUE(frames_equal(gen_frame(tk, t, 99), gen_frame(tk, t, 99)));
  EXPECT_FALSE(bitwise_equal(gen_frame(tk, 0, 99).features, gen_frame(tk, 0, 100).features));
}

TEST(Generator, SameProjectionSeedSameStream) {
  TaskSpec a = task(0.3), b = task(0.3);
  b.task_id = 9;
  b.modality_tag = "mri";
  const auto va = gen_volume(a, 5), vb = gen_volume(b, 5);
  ASSERT_EQ(va.size(), 8u);
  for (std::size_t i = 0; i < va.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(va[i].features, vb[i].features));
    EXPECT_TRUE(bitwise_equal(va[i].mask, vb[i].mask));
    EXPECT_EQ(va[i].is_corrupted, vb[i].is_corrupted);
  }
}

TEST(Generator, MasksAreBinaryAndDriftSmoothly) {
  for (ShapeFamily fam : {ShapeFamily::ellipse, ShapeFamily::rectangle}) {
    const auto vol = gen_volume(task(0.0, fam), 3);
    for (std::size_t t = 0; t < vol.size(); ++t) {
      EXPECT_TRUE(is_binary(vol[t].mask));
      EXPECT_TRUE(mask_bbox(vol[t].mask).has_value());
      EXPECT_EQ(vol[t].slice_index, static_cast<std::int64_t>(t));
      if (t) EXPECT_GT(dice(vol[t].mask, vol[t - 1].mask), 0.6) << "slice " << t;
    }
  }
}

TEST(Generator, NoCorruptionAtZeroProbability) {
  const TaskSpec tk = task(0.0);
  for (std::uint64_t s = 0; s < 200; ++s)
    for (std::int64_t t = 0; t < 8; ++t) {
      const Frame f = gen_frame(tk, t, s);
      ASSERT_FALSE(f.is_corrupted);
      ASSERT_TRUE(bitwise_equal(f.mask, true_mask(tk, t, s)));
    }
}

TEST(Generator, CorruptionFrequencyMatchesProbability) {
  constexpr int kFrames = 10000;
  const double p = 0.3;
  const TaskSpec tk = task(p);
  int hits = 0;
  for (int i = 0; i < kFrames; ++i) {
    const Frame f = gen_frame(tk, i % 8, static_cast<std::uint64_t>(i / 8));
    if (f.is_corrupted) {
      ++hits;
      EXPECT_FALSE(bitwise_equal(f.mask, true_mask(tk, i % 8, static_cast<std::uint64_t>(i / 8))));
      EXPECT_TRUE(is_binary(f.mask));
    }
  }
  const double sigma = std::sqrt(kFrames * p * (1 - p));
  EXPECT_LE(std::abs(hits - kFrames * p), 3 * sigma) << hits;
}

TEST(Generator, NoiseConfigValidated) {
  TaskSpec tk = task(1.5);
  EXPECT_THROW(gen_frame(tk, 0, 0), Error);
  tk = task(0.0);
  tk.noise.feature_noise_sigma = -1;
  EXPECT_THROW(gen_frame(tk, 0, 0), Error);
}

TEST(Preprocess, DropsEmptyElongatedAndSplitsClasses) {
  using fixtures::make_frame;
  EXPECT_TRUE(preprocess_stream({make_frame(8, 8, 0, {})}).empty());
  EXPECT_TRUE(preprocess_stream({make_frame(10, 30, 0, {{0, 1}})}).empty());
  const auto split = preprocess_stream({make_frame(4, 4, 0, {{0, 1}, {5, 2}})});
  ASSERT_EQ(split.size(), 2u);
  EXPECT_EQ(split[0].mask, mask_from(4, 4, {0}));
  EXPECT_EQ(split[1].mask, mask_from(4, 4, {5}));
}

TEST(Preprocess, TwelveFrameFixture) {
  const auto out = preprocess_stream(fixtures::preprocess_twelve());
  const auto want = fixtures::preprocess_twelve_expected();
  ASSERT_EQ(out.size(), want.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].slice_index, want[i].slice);
    Tensor m(out[i].mask.shape());
    for (auto p : want[i].pixels) m[p] = 1.0;
    EXPECT_EQ(out[i].mask, m) << "survivor " << i;
  }
}

TEST(Preprocess, Idempotent) {
  auto frames = fixtures::preprocess_twelve();
  for (const auto& f : gen_volume(task(0.4), 8)) frames.push_back(f);
  const auto once = preprocess_stream(frames);
  const auto twice = preprocess_stream(once);
  ASSERT_EQ(once.size(), twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_TRUE(frames_equal(once[i], twice[i]));
}

TEST(Preprocess, ShuffleMovesOnlyStandaloneFrames) {
  std::vector<Frame> frames;
  for (int i = 0; i < 12; ++i) {
    Frame f = fixtures::make_frame(4, 4, i, {{0, 1}});
    f.volume_id = (i % 3 == 0) ? 7 : -1;
    frames.push_back(f);
  }
  const auto out = shuffle_standalone(frames, 5);
  bool moved = false;
  std::vector<std::int64_t> seen;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i % 3 == 0) EXPECT_EQ(out[i].slice_index, static_cast<std::int64_t>(i));
    else EXPECT_EQ(out[i].volume_id, -1);
    moved |= out[i].slice_index != static_cast<std::int64_t>(i);
    seen.push_back(out[i].slice_index);
  }
  EXPECT_TRUE(moved);
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], static_cast<std::int64_t>(i));
  const auto again = shuffle_standalone(frames, 5);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].slice_index, again[i].slice_index);
}

TEST(Preprocess, BoundingBox) {
  EXPECT_FALSE(mask_bbox(Tensor(Shape{3, 3})));
  const auto b = mask_bbox(mask_from(4, 5, {6, 13}));
  ASSERT_TRUE(b);
  EXPECT_EQ(*b, (BoundingBox{1, 1, 4, 3}));
}
