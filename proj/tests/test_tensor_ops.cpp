#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ynet/ops.hpp"
#include "ynet/tape.hpp"

using namespace ynet;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Direct zero-padded convolution, written independently of the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor& b) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), F = k.dim(0), K = k.dim(2);
  const long pad = static_cast<long>(K / 2);
  Tensor out({N, F, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          double s = b[f];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < K; ++i)
              for (std::size_t j = 0; j < K; ++j) {
                const long y = static_cast<long>(h + i) - pad, xx = static_cast<long>(w + j) - pad;
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += static_cast<double>(x.at(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx))) *
                     k.at(f, c, i, j);
              }
          out.at(n, f, h, w) = static_cast<float>(s);
        }
  return out;
}

Tensor run_conv(const Tensor& x, const Tensor& k, const Tensor& b) {
  Tape t;
  return t.value(conv2d(t, t.constant(x), t.constant(k), t.constant(b)));
}

}  // namespace

TEST(Tensor, RejectsZeroDimsAndLengthMismatch) {
  EXPECT_THROW(Tensor({2, 0, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
  const Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(numel(t.shape()), t.size());
}

TEST(Conv2d, AllOnesGivesCornerEdgeCenterCounts) {
  const Tensor x({1, 1, 3, 3}, 1.0f), k({1, 1, 3, 3}, 1.0f), b({1}, 0.0f);
  const Tensor y = run_conv(x, k, b);
  const std::vector<float> expect{4, 6, 4, 6, 9, 6, 4, 6, 4};
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), expect);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  const Tensor x = random_tensor({2, 3, 5, 4}, 1);
  Tensor k({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k.at(c, c, 1, 1) = 1.0f;
  EXPECT_EQ(run_conv(x, k, Tensor({3})), x);
}

TEST(Conv2d, ZeroInputZeroOutput) {
  const Tensor y = run_conv(Tensor({1, 2, 4, 4}), random_tensor({5, 2, 3, 3}, 2), Tensor({5}));
  EXPECT_TRUE(std::all_of(y.data().begin(), y.data().end(), [](float v) { return v == 0.0f; }));
}

TEST(Conv2d, MatchesDirectConvolution) {
  for (std::size_t k : {1u, 3u}) {
    const Tensor x = random_tensor({2, 3, 6, 5}, 3), w = random_tensor({4, 3, k, k}, 4), b = random_tensor({4}, 5);
    const Tensor got = run_conv(x, w, b), want = naive_conv(x, w, b);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5) << "k=" << k << " i=" << i;
  }
}

TEST(Conv2d, LinearInInput) {
  const Tensor x = random_tensor({1, 2, 5, 5}, 6), y = random_tensor({1, 2, 5, 5}, 7), w = random_tensor({3, 2, 3, 3}, 8);
  const float a = 0.7f, b = -1.3f;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const Tensor lhs = run_conv(mix, w, Tensor({3})), cx = run_conv(x, w, Tensor({3})), cy = run_conv(y, w, Tensor({3}));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-5);
}

TEST(Conv2d, ShapeErrorNamesBothShapes) {
  Tape t;
  const Var x = t.constant(Tensor({1, 2, 4, 4})), k = t.constant(Tensor({1, 3, 3, 3})), b = t.constant(Tensor({1}));
  try {
    conv2d(t, x, k, b);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,2,4,4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1,3,3,3]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, RejectsUnsupportedKernelSize) {
  Tape t;
  EXPECT_THROW(conv2d(t, t.constant(Tensor({1, 1, 4, 4})), t.constant(Tensor({1, 1, 5, 5})), t.constant(Tensor({1}))),
               ShapeError);
}

TEST(MaxPool, SingleWindow) {
  Tape t;
  const Tensor y = t.value(maxpool2d(t, t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))));
  EXPECT_EQ(y, Tensor({1, 1, 1, 1}, {4}));
}

TEST(MaxPool, RampWindows) {
  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
  Tape t;
  const Tensor y = t.value(maxpool2d(t, t.constant(Tensor({1, 1, 4, 4}, ramp))));
  EXPECT_EQ(y, Tensor({1, 1, 2, 2}, {5, 7, 13, 15}));
}

TEST(MaxPool, ConstantInput) {
  Tape t;
  const Tensor y = t.value(maxpool2d(t, t.constant(Tensor({2, 3, 6, 4}, 2.5f))));
  EXPECT_EQ(y, Tensor({2, 3, 3, 2}, 2.5f));
}

TEST(MaxPool, RejectsOddSpatialSize) {
  Tape t;
  EXPECT_THROW(maxpool2d(t, t.constant(Tensor({1, 1, 3, 4}))), ShapeError);
  EXPECT_THROW(maxpool2d(t, t.constant(Tensor({1, 1, 4, 5}))), ShapeError);
}

TEST(MaxPool, TieRoutesGradientToFirstMaximum) {
  Tape t;
  const Var x = t.leaf(Tensor({1, 1, 2, 2}, 1.0f), true);
  const Var y = maxpool2d(t, x);
  t.backward(y);
  EXPECT_EQ(t.grad(x), Tensor({1, 1, 2, 2}, {1, 0, 0, 0}));
}

TEST(MaxPool, OutputBoundedByInputMax) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_tensor({2, 2, 4, 6}, seed);
    Tape t;
    const Tensor y = t.value(maxpool2d(t, t.constant(x)));
    EXPECT_LE(*std::max_element(y.data().begin(), y.data().end()), *std::max_element(x.data().begin(), x.data().end()));
  }
}

TEST(Upsample, NearestReplication) {
  Tape t;
  const Tensor y = t.value(upsample2d(t, t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))));
  EXPECT_EQ(y, Tensor({1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Upsample, MaxPoolRecoversInput) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_tensor({2, 3, 3, 5}, seed);
    Tape t;
    EXPECT_EQ(t.value(maxpool2d(t, upsample2d(t, t.constant(x)))), x);
  }
}

TEST(Upsample, PreservesValueMultiset) {
  const Tensor x = random_tensor({1, 2, 3, 3}, 9);
  Tape t;
  const Tensor y = t.value(upsample2d(t, t.constant(x)));
  std::vector<float> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  std::vector<float> a4;
  for (float v : a) a4.insert(a4.end(), 4, v);
  std::sort(a4.begin(), a4.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a4, b);
}

TEST(Upsample, ZeroInput) {
  Tape t;
  EXPECT_EQ(t.value(upsample2d(t, t.constant(Tensor({1, 2, 2, 3})))), Tensor({1, 2, 4, 6}));
}

TEST(Upsample, BackwardSumsReplicatedGroups) {
  Tape t;
  const Var x = t.leaf(Tensor({1, 1, 1, 2}, 0.0f), true);
  const Var y = upsample2d(t, x);
  const Var s = weighted_sum(t, y, Tensor({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
  t.backward(s);
  EXPECT_EQ(t.grad(x), Tensor({1, 1, 1, 2}, {1 + 2 + 5 + 6, 3 + 4 + 7 + 8}));
}

TEST(Selu, ReferenceValues) {
  Tape t;
  const Tensor y = t.value(selu(t, t.constant(Tensor({3}, {0.0f, 1.0f, -1.0f}))));
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_NEAR(y[1], 1.05070, 1e-5);
  EXPECT_NEAR(y[2], -1.11133, 1e-5);
}

TEST(Selu, ContinuousAtZero) {
  Tape t;
  const Tensor y = t.value(selu(t, t.constant(Tensor({2}, {-1e-7f, 1e-7f}))));
  EXPECT_NEAR(y[0], y[1], 1e-6);
}

TEST(Relu, ClampsNegatives) {
  Tape t;
  EXPECT_EQ(t.value(relu(t, t.constant(Tensor({3}, {-2, 0, 3})))), Tensor({3}, {0, 0, 3}));
}

TEST(Sigmoid, ReferenceValuesAndSymmetry) {
  Tape t;
  const Tensor y = t.value(sigmoid(t, t.constant(Tensor({2}, {0.0f, 2.0f}))));
  EXPECT_EQ(y[0], 0.5f);
  EXPECT_NEAR(y[1], 0.88080, 1e-5);
  const Tensor x = random_tensor({50}, 11, -8.0f, 8.0f);
  Tensor neg(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) neg[i] = -x[i];
  const Tensor a = t.value(sigmoid(t, t.constant(x))), b = t.value(sigmoid(t, t.constant(neg)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a[i] + b[i], 1.0f, 1e-6);
}

TEST(Sigmoid, StrictlyInsideUnitInterval) {
  Tape t;
  const Tensor y = t.value(sigmoid(t, t.constant(Tensor({4}, {-200.0f, -50.0f, 50.0f, 200.0f}))));
  for (float v : y.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(BatchNorm, ConstantInputGivesZeros) {
  Tape t;
  const Tensor rm({2}), rv({2}, 1.0f);
  const Tensor y = t.value(batchnorm(t, t.constant(Tensor({2, 2, 3, 3}, 4.0f)), t.constant(Tensor({2}, 1.0f)),
                                     t.constant(Tensor({2})), BatchNormMode::Train, rm, rv));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Tape t;
  const Tensor rm({2}), rv({2}, 1.0f);
  const Tensor y = t.value(batchnorm(t, t.constant(random_tensor({2, 2, 2, 2}, 3)), t.constant(Tensor({2})),
                                     t.constant(Tensor({2}, {0.25f, -3.0f})), BatchNormMode::Train, rm, rv));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(y[n * 8 + i], 0.25f);
      EXPECT_EQ(y[n * 8 + 4 + i], -3.0f);
    }
}

TEST(BatchNorm, TwoValuedChannelNormalizesToUnit) {
  Tape t;
  const Tensor rm({1}), rv({1}, 1.0f);
  BatchStats<float> stats;
  const Tensor y = t.value(batchnorm(t, t.constant(Tensor({1, 1, 1, 2}, {1, 3})), t.constant(Tensor({1}, 1.0f)),
                                     t.constant(Tensor({1})), BatchNormMode::Train, rm, rv, &stats));
  // eps = 1e-5 perturbs the unit std slightly.
  EXPECT_NEAR(y[0], -1.0f, 1e-5);
  EXPECT_NEAR(y[1], 1.0f, 1e-5);
  EXPECT_FLOAT_EQ(stats.mean[0], 2.0f);
  EXPECT_FLOAT_EQ(stats.var[0], 1.0f);
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  Tape t;
  const Tensor rm({1}, 2.0f), rv({1}, 4.0f);
  const Tensor y = t.value(batchnorm(t, t.constant(Tensor({1, 1, 1, 2}, {2, 6})), t.constant(Tensor({1}, 1.0f)),
                                     t.constant(Tensor({1}, 0.5f)), BatchNormMode::Infer, rm, rv));
  EXPECT_NEAR(y[0], 0.5f, 1e-6);
  EXPECT_NEAR(y[1], 0.5f + 4.0f / std::sqrt(4.0f + 1e-5f), 1e-5);
}

TEST(Concat, ShapeOrderAndSlices) {
  const Tensor a = random_tensor({2, 4, 3, 3}, 1), b = random_tensor({2, 8, 3, 3}, 2);
  Tape t;
  const Tensor y = t.value(concat(t, t.constant(a), t.constant(b)));
  EXPECT_EQ(y.shape(), (Shape{2, 12, 3, 3}));
  EXPECT_EQ(slice_channels(y, 0, 4), a);
  EXPECT_EQ(slice_channels(y, 4, 12), b);
}

TEST(Concat, RejectsSpatialMismatch) {
  Tape t;
  EXPECT_THROW(concat(t, t.constant(Tensor({1, 1, 2, 2})), t.constant(Tensor({1, 1, 2, 4}))), ShapeError);
  EXPECT_THROW(concat(t, t.constant(Tensor({1, 1, 2, 2})), t.constant(Tensor({2, 1, 2, 2}))), ShapeError);
}

TEST(Concat, ZeroHalfKernelEqualsPlainConv) {
  const Tensor x = random_tensor({1, 3, 4, 4}, 5), w = random_tensor({2, 3, 3, 3}, 6), b = random_tensor({2}, 7);
  Tensor wide({2, 6, 3, 3});
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) wide.at(f, c, i, j) = w.at(f, c, i, j);
  Tape t;
  const Var joined = concat(t, t.constant(x), t.constant(Tensor({1, 3, 4, 4})));
  const Tensor lhs = t.value(conv2d(t, joined, t.constant(wide), t.constant(b)));
  const Tensor rhs = run_conv(x, w, b);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-6);
}

TEST(Add, Examples) {
  Tape t;
  const Tensor x = random_tensor({2, 3}, 1);
  EXPECT_EQ(t.value(add(t, t.constant(x), t.constant(Tensor({2, 3})))), x);
  const Tensor twice = t.value(add(t, t.constant(x), t.constant(x)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(twice[i], 2.0f * x[i]);
  EXPECT_EQ(t.value(add(t, t.constant(Tensor({1, 2}, {1, 2})), t.constant(Tensor({1, 2}, {3, 4})))),
            Tensor({1, 2}, {4, 6}));
  EXPECT_THROW(add(t, t.constant(Tensor({2})), t.constant(Tensor({3}))), ShapeError);
}

TEST(Tape, AddOfSelfDoublesUpstreamExactly) {
  Tape t;
  const Var x = t.leaf(random_tensor({3, 2}, 4), true);
  const Tensor w = random_tensor({3, 2}, 5);
  const Var s = weighted_sum(t, add(t, x, x), w);
  t.backward(s);
  const Tensor g = t.grad(x);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], 2.0f * w[i]);
}

TEST(Tape, EachBackwardRuleRunsOnce) {
  Tape t;
  const Var x = t.leaf(random_tensor({1, 1, 4, 4}, 1), true);
  const Var a = selu(t, x);
  const Var b = add(t, a, a);
  const Var c = maxpool2d(t, b);
  const Var s = weighted_sum(t, c, Tensor({1, 1, 2, 2}, 1.0f));
  t.backward(s);
  EXPECT_EQ(t.backward_calls(), 4u);  // selu, add, maxpool, weighted_sum
  t.backward(s);
  EXPECT_EQ(t.backward_calls(), 4u);
}

TEST(Tape, BackwardRequiresScalar) {
  Tape t;
  const Var x = t.leaf(Tensor({2}, 1.0f), true);
  EXPECT_THROW(t.backward(selu(t, x)), std::invalid_argument);
}

TEST(Tape, GradientShapesMatchLeaves) {
  Tape t;
  const Var x = t.leaf(random_tensor({1, 2, 4, 4}, 1), true);
  const Var k = t.leaf(random_tensor({3, 2, 3, 3}, 2), true);
  const Var b = t.leaf(random_tensor({3}, 3), true);
  const Var y = conv2d(t, x, k, b);
  t.backward(weighted_sum(t, y, random_tensor({1, 3, 4, 4}, 4)));
  EXPECT_EQ(t.grad(x).shape(), t.value(x).shape());
  EXPECT_EQ(t.grad(k).shape(), t.value(k).shape());
  EXPECT_EQ(t.grad(b).shape(), t.value(b).shape());
}

TEST(Tensor, ForwardOpsKeepFiniteValues) {
  const Tensor x = random_tensor({1, 2, 4, 4}, 3, -30.0f, 30.0f);
  Tape t;
  const Var v = t.constant(x);
  for (Var y : {selu(t, v), relu(t, v), sigmoid(t, v), maxpool2d(t, v), upsample2d(t, v)}) {
    EXPECT_TRUE(t.value(y).all_finite());
  }
}
