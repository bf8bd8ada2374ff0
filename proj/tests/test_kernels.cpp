#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "samed/kernels.hpp"
#include "samed/random.hpp"

using namespace samed;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at({1, 2}), 1.5);
  EXPECT_THROW(t.at({2, 0}), Error);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, PermuteMovesAxes) {
  Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Tensor p = t.permuted({1, 0});
  EXPECT_EQ(p.shape(), (Shape{3, 2}));
  EXPECT_EQ(p.values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_TRUE(bitwise_equal(p.permuted({1, 0}), t));
}

TEST(Tensor, ArithmeticChecksShapes) {
  Tensor a(Shape{2}, 1.0), b(Shape{3}, 1.0);
  EXPECT_THROW(a += b, ShapeError);
  EXPECT_EQ((a + a).values(), (std::vector<double>{2, 2}));
}

TEST(LayerNorm, ConstantRowNormalizesToZero) {
  const Tensor x(Shape{2, 4}, 3.25);
  const Tensor y = layer_norm(x, Tensor(Shape{4}, 1.0), Tensor(Shape{4}, 0.0), 1e-6);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
  const Tensor y = layer_norm(Tensor::vector({1, -1}), Tensor::vector({1, 1}), Tensor::vector({0, 0}), 1e-12);
  // mean 0, variance 1: (x - 0) / sqrt(1 + 1e-12)
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], -1.0, 1e-12);
}

TEST(LayerNorm, ZeroGainPassesBias) {
  const Tensor y = layer_norm(Tensor::vector({3, 5}), Tensor::vector({0, 0}), Tensor::vector({7, 7}), 1e-6);
  EXPECT_EQ(y.values(), (std::vector<double>{7, 7}));
}

TEST(LayerNorm, ShapeErrorNamesBothShapes) {
  try {
    layer_norm(Tensor(Shape{2, 3}), Tensor(Shape{4}, 1.0), Tensor(Shape{4}), 1e-6);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(layer_norm(Tensor(Shape{1, 2}), Tensor(Shape{2}, 1.0), Tensor(Shape{2}), 0.0), Error);
}

TEST(LayerNorm, RandomRowsHaveZeroMeanUnitVariance) {
  const Tensor x = random_normal({16, 9}, 3, 4.0);
  const Tensor y = layer_norm(x, Tensor(Shape{9}, 1.0), Tensor(Shape{9}), 1e-12);
  for (std::size_t r = 0; r < 16; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 9; ++j) m += y[r * 9 + j];
    m /= 9;
    for (std::size_t j = 0; j < 9; ++j) v += (y[r * 9 + j] - m) * (y[r * 9 + j] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 9, 1.0, 1e-10);
  }
}

TEST(Linear, Identity) {
  const Tensor y = linear(Tensor::matrix({{1, 2}}), Tensor::identity(2), Tensor::vector({0, 0}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2}));
}

TEST(Linear, HandMultiply) {
  const Tensor y = linear(Tensor::matrix({{1, 1}}), Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({1, 1}));
  EXPECT_EQ(y.values(), (std::vector<double>{5, 7}));
}

TEST(Linear, EmptyBatch) {
  const Tensor y = linear(Tensor(Shape{0, 3}), random_normal({3, 5}, 1));
  EXPECT_EQ(y.shape(), (Shape{0, 5}));
  EXPECT_EQ(y.size(), 0u);
}

TEST(Linear, DimensionMismatch) {
  EXPECT_THROW(linear(Tensor(Shape{2, 3}), Tensor(Shape{4, 2})), ShapeError);
  EXPECT_THROW(linear(Tensor(Shape{2, 3}), Tensor(Shape{3, 2}), Tensor(Shape{3})), ShapeError);
}

TEST(Conv3d, DeltaKernelIsIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_normal({3, 4, 5, 2}, seed);
    Tensor k(Shape{3, 3, 3, 2, 2});
    for (std::size_t c = 0; c < 2; ++c) k.at({1, 1, 1, c, c}) = 1.0;
    EXPECT_TRUE(bitwise_equal(conv3d(x, k), x));
  }
}

TEST(Conv3d, PointKernelMatchesLinear) {
  const Tensor x = random_normal({2, 3, 3, 4}, 5);
  const Tensor w = random_normal({4, 3}, 6);
  const Tensor y = conv3d(x, w.reshaped({1, 1, 1, 4, 3}));
  const Tensor ref = linear(x.reshaped({18, 4}), w).reshaped({2, 3, 3, 3});
  EXPECT_LE(max_abs_diff(y, ref), 1e-14);
}

TEST(Conv3d, OnesKernelAlongDepth) {
  const Tensor y = conv3d(Tensor(Shape{3, 1, 1, 1}, 1.0), Tensor(Shape{3, 1, 1, 1, 1}, 1.0));
  EXPECT_EQ(y.values(), (std::vector<double>{2, 3, 2}));
}

TEST(Conv3d, RejectsEvenExtentAndChannelMismatch) {
  EXPECT_THROW(conv3d(Tensor(Shape{3, 3, 3, 1}), Tensor(Shape{2, 1, 1, 1, 1})), Error);
  EXPECT_THROW(conv3d(Tensor(Shape{3, 3, 3, 1}), Tensor(Shape{1, 1, 1, 2, 1})), ShapeError);
}

TEST(Conv3d, BruteForceOracle) {
  const Tensor x = random_normal({3, 4, 2, 2}, 9);
  const Tensor k = random_normal({3, 3, 1, 2, 3}, 10);
  const Tensor y = conv3d(x, k);
  for (int d = 0; d < 3; ++d)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 2; ++w)
        for (std::size_t co = 0; co < 3; ++co) {
          double s = 0;
          for (int i = -1; i <= 1; ++i)
            for (int j = -1; j <= 1; ++j) {
              const int sd = d + i, sh = h + j;
              if (sd < 0 || sd >= 3 || sh < 0 || sh >= 4) continue;
              for (std::size_t ci = 0; ci < 2; ++ci) {
                s += x.at({std::size_t(sd), std::size_t(sh), std::size_t(w), ci}) *
                     k.at({std::size_t(i + 1), std::size_t(j + 1), 0, ci, co});
              }
            }
          EXPECT_NEAR(y.at({std::size_t(d), std::size_t(h), std::size_t(w), co}), s, 1e-13);
        }
}

TEST(Softmax, UniformRow) {
  const Tensor y = softmax(Tensor::vector({0, 0, 0}), 0);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const Tensor y = softmax(Tensor::vector({1000, 0}), 0);
  EXPECT_TRUE(all_finite(y));
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_NEAR(y[1], 0.0, 1e-15);
}

TEST(Softmax, LogWeights) {
  const Tensor y = softmax(Tensor::vector({std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
  EXPECT_NEAR(y[0], 1.0 / 6, 1e-15);
  EXPECT_NEAR(y[1], 2.0 / 6, 1e-15);
  EXPECT_NEAR(y[2], 3.0 / 6, 1e-15);
}

TEST(Softmax, RandomRowsSumToOne) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_uniform({4, 7, 5}, rng, -50, 50);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const Tensor y = softmax(x, axis);
      const Shape& s = y.shape();
      std::size_t stride = 1;
      for (std::size_t a = axis + 1; a < 3; ++a) stride *= s[a];
      for (std::size_t i = 0; i < y.size(); ++i) {
        if ((i / stride) % s[axis] != 0) continue;
        double sum = 0;
        for (std::size_t j = 0; j < s[axis]; ++j) sum += y[i + j * stride];
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
  EXPECT_THROW(softmax(Tensor(Shape{2, 2}), 2), Error);
}

TEST(Activations, KnownValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(40.0), 1.0, 1e-15);
  EXPECT_NEAR(sigmoid(-40.0), 0.0, 1e-15);
  EXPECT_GT(sigmoid(-40.0), 0.0);
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0)));
  EXPECT_EQ(gelu(0.0), 0.0);
  // tanh approximation evaluated by hand at x = 1
  EXPECT_NEAR(gelu(1.0), 0.5 * (1 + std::tanh(std::sqrt(2 / M_PI) * (1 + 0.044715))), 1e-15);
  EXPECT_EQ(activation_from_string("sigmoid"), Activation::sigmoid);
  EXPECT_THROW(activation_from_string("relu"), Error);
}

TEST(Activations, DerivativesMatchDifferences) {
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(gelu_derivative(x), fd, 1e-8);
  }
  const Tensor x = Tensor::vector({-1, 0, 2});
  const Tensor dy = Tensor::vector({1, 1, 1});
  const Tensor ds = activate_backward(x, dy, Activation::sigmoid);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(ds[i], sigmoid(x[i]) * (1 - sigmoid(x[i])), 1e-15);
}

TEST(Attention, SingleKeyReturnsProjectedValue) {
  const AttentionParams p = AttentionParams::random(4, 2, 3, 0.5);
  const Tensor k = random_normal({1, 4}, 4), v = random_normal({1, 4}, 5);
  const Tensor expected = linear(linear(v, p.w_v), p.w_o);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Tensor out = multi_head_attention(random_normal({3, 4}, 10 + s), k, v, p);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at({i, c}), expected[c], 1e-14);
  }
}

TEST(Attention, ZeroOutputProjection) {
  AttentionParams p = AttentionParams::random(4, 2, 3, 0.5);
  p.w_o.fill(0.0);
  const Tensor x = random_normal({5, 4}, 1);
  const Tensor y = multi_head_attention(x, x, x, p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, TwoTokenHandComputed) {
  const AttentionParams p = AttentionParams::identity(2, 1);
  const Tensor q = Tensor::matrix({{1, 0}});
  const Tensor k = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor v = Tensor::matrix({{2, 0}, {0, 4}});
  const double a = 1 / std::sqrt(2.0);  // scores q.k / sqrt(d): {1/sqrt2, 0}
  const double w0 = std::exp(a) / (std::exp(a) + 1), w1 = 1 - w0;
  const Tensor out = multi_head_attention(q, k, v, p);
  EXPECT_NEAR(out[0], 2 * w0, 1e-15);
  EXPECT_NEAR(out[1], 4 * w1, 1e-15);
}

TEST(Attention, KeyValuePermutationInvariance) {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const AttentionParams p = AttentionParams::random(6, 3, 100 + t, 0.6);
    const Tensor q = random_normal({4, 6}, rng), kv = random_normal({7, 6}, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor kv2(kv.shape());
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t c = 0; c < 6; ++c) kv2.at({i, c}) = kv.at({perm[i], c});
    EXPECT_LE(max_abs_diff(multi_head_attention(q, kv, kv, p), multi_head_attention(q, kv2, kv2, p)), 1e-12);
  }
}

TEST(Attention, HeadDivisibility) {
  AttentionParams p = AttentionParams::identity(6, 1);
  p.num_heads = 4;
  EXPECT_THROW(p.validate(), Error);
  EXPECT_THROW(multi_head_attention(Tensor(Shape{1, 6}), Tensor(Shape{1, 6}), Tensor(Shape{2, 6}),
                                    AttentionParams::identity(6, 1)),
               ShapeError);
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
  const AttentionParams p = AttentionParams::random(4, 2, 8, 0.7);
  const Tensor q = random_normal({3, 4}, 1), k = random_normal({5, 4}, 2), v = random_normal({5, 4}, 3);
  const Tensor up = random_normal({3, 4}, 4);
  auto loss = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
    const Tensor y = multi_head_attention(qq, kk, vv, p);
    return dot(y.data(), up.data());
  };
  AttentionCache cache;
  multi_head_attention(q, k, v, p, &cache);
  const AttentionGrads g = multi_head_attention_backward(q, k, v, p, cache, up);
  EXPECT_LE(max_abs_diff(g.dq, finite_diff_grad([&](const Tensor& t) { return loss(t, k, v); }, q, 1e-6)), 1e-7);
  EXPECT_LE(max_abs_diff(g.dk, finite_diff_grad([&](const Tensor& t) { return loss(q, t, v); }, k, 1e-6)), 1e-7);
  EXPECT_LE(max_abs_diff(g.dv, finite_diff_grad([&](const Tensor& t) { return loss(q, k, t); }, v, 1e-6)), 1e-7);
}

TEST(Cosine, KnownValues) {
  const Tensor a = Tensor::vector({1, 0});
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(a, Tensor::vector({0, 1})), 0.0);
  EXPECT_NEAR(cosine_similarity(a, Tensor::vector({1, 1})), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(cosine_similarity(a, Tensor::vector({0, 0})), 0.0);
  EXPECT_EQ(cosine_similarity(Tensor::vector({1e-14, 0}), a), 0.0);
  EXPECT_THROW(cosine_similarity(a, Tensor::vector({1, 2, 3})), ShapeError);
}

TEST(Cosine, SymmetricAndScaleInvariant) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const Tensor a = random_normal({3, 4}, rng), b = random_normal({3, 4}, rng);
    const double c = cosine_similarity(a, b);
    EXPECT_LE(std::abs(c), 1.0);
    EXPECT_NEAR(c, cosine_similarity(b, a), 1e-12);
    const double lambda = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    EXPECT_NEAR(c, cosine_similarity(a * lambda, b), 1e-12);
  }
}

TEST(FiniteDiff, SumOfSquares) {
  const Tensor g = finite_diff_grad(
      [](const Tensor& x) { return x[0] * x[0] + x[1] * x[1]; }, Tensor::vector({1, 2}), 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDiff, ConstantAndLinear) {
  const Tensor x = random_normal({5}, 2);
  const Tensor zero = finite_diff_grad([](const Tensor&) { return 3.0; }, x, 1e-4);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  const Tensor w = random_normal({5}, 3);
  const Tensor g = finite_diff_grad([&](const Tensor& t) { return dot(t.data(), w.data()); }, x, 1e-4);
  EXPECT_LE(max_abs_diff(g, w), 1e-10);
}

TEST(Kernels, RepeatedCallsAreBitIdentical) {
  const Tensor x = random_normal({2, 3, 3, 4}, 8);
  const Tensor k = random_normal({3, 1, 1, 4, 4}, 9);
  EXPECT_TRUE(bitwise_equal(conv3d(x, k), conv3d(x, k)));
  const AttentionParams p = AttentionParams::random(4, 2, 1, 0.5);
  const Tensor t = x.reshaped({18, 4});
  EXPECT_TRUE(bitwise_equal(multi_head_attention(t, t, t, p), multi_head_attention(t, t, t, p)));
  EXPECT_TRUE(bitwise_equal(softmax(t, 1), softmax(t, 1)));
}
