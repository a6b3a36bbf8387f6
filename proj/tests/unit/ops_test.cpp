// Copyright 2026 The MMChange Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mmchange/ops.hpp"
#include "mmchange/random.hpp"
#include "test_util.hpp"

namespace mmchange {
namespace {

using testing::random_tensor;

TEST(Softmax, ZeroLogitsAreUniform) {
  Var<double> x(Tensor<double>(Shape{1, 4, 2, 3}));
  auto y = softmax(x, SoftmaxAxis::kChannel).value();
  for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeOneHotSaturates) {
  Tensor<double> t(Shape{1, 3, 1, 1});
  t[1] = 1e3;
  auto y = softmax(Var<double>(t), SoftmaxAxis::kChannel).value();
  EXPECT_NEAR(y[0], 0.0, 1e-6);
  EXPECT_NEAR(y[1], 1.0, 1e-6);
  EXPECT_NEAR(y[2], 0.0, 1e-6);
}

TEST(Softmax, SlicesSumToOneOnBothAxes) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Shape s{1 + trial % 2, 3, 2, 2};
    auto x = random_tensor<double>(s, rng, -8.0, 8.0);
    auto ch = softmax(Var<double>(x), SoftmaxAxis::kChannel).value();
    auto sp = softmax(Var<double>(x), SoftmaxAxis::kSpatial).value();
    for (int n = 0; n < s.n; ++n) {
      for (int i = 0; i < 4; ++i) {
        double sum = 0;
        for (int c = 0; c < s.c; ++c) sum += ch.plane(n, c)[i];
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
      for (int c = 0; c < s.c; ++c) {
        const double* p = sp.plane(n, c);
        EXPECT_NEAR(std::accumulate(p, p + 4, 0.0), 1.0, 1e-6);
        for (int i = 0; i < 4; ++i) {
          EXPECT_GT(p[i], 0.0);
          EXPECT_LT(p[i], 1.0);
        }
      }
    }
  }
}

TEST(Sdpa, ZeroInputGivesZeroOutput) {
  Var<double> x(Tensor<double>(Shape{1, 3, 2, 2}));
  const auto y = sdpa(x).value();
  for (double v : y.vec()) EXPECT_EQ(v, 0.0);
}

// Explicit 4-token attention: the only nonzero token is position 2 with
// value (1, 2); scores s_ij = <x_i, x_j> / sqrt(2).
TEST(Sdpa, SingleNonzeroTokenMatchesHandEvaluation) {
  Tensor<double> t(Shape{1, 2, 2, 2});
  t(0, 0, 1, 0) = 1.0;
  t(0, 1, 1, 0) = 2.0;
  auto y = sdpa(Var<double>(t)).value();
  const double e = std::exp(5.0 / std::sqrt(2.0));
  // Zero tokens attend uniformly: output = x_2 / 4.
  // Token 2 attends with weights e / (e + 3) on itself.
  const double w_self = e / (e + 3.0);
  for (int pos = 0; pos < 4; ++pos) {
    const double w = pos == 2 ? w_self : 0.25;
    EXPECT_NEAR(y.plane(0, 0)[pos], w * 1.0, 1e-12) << pos;
    EXPECT_NEAR(y.plane(0, 1)[pos], w * 2.0, 1e-12) << pos;
  }
}

TEST(Sdpa, SpatialPermutationEquivariance) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Shape s{1, 3, 2, 3};
    auto x = random_tensor<double>(s, rng);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 5; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    Tensor<double> xp(s);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i) xp.plane(0, c)[i] = x.plane(0, c)[perm[i]];
    auto y = sdpa(Var<double>(x)).value();
    auto yp = sdpa(Var<double>(xp)).value();
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i) EXPECT_NEAR(yp.plane(0, c)[i], y.plane(0, c)[perm[i]], 1e-12);
  }
}

TEST(BatchNorm, IdentityStateInEvalModeMapsZeroToZero) {
  NormStats<double> st(3);
  Var<double> g(Tensor<double>(Shape{3, 1, 1, 1}, 1.0)), b(Tensor<double>(Shape{3, 1, 1, 1}));
  auto y = batch_norm(Var<double>(Tensor<double>(Shape{2, 3, 2, 2})), g, b, st).value();
  for (double v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, ConstantInputInTrainModeYieldsShift) {
  NormStats<double> st(2);
  st.training = true;
  Tensor<double> shift(Shape{2, 1, 1, 1});
  shift[0] = 0.5;
  shift[1] = -1.25;
  Var<double> g(Tensor<double>(Shape{2, 1, 1, 1}, 3.0)), b(shift);
  auto y = batch_norm(Var<double>(Tensor<double>(Shape{2, 2, 3, 3}, 7.0)), g, b, st).value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y.plane(n, c)[i], shift[c]);
}

TEST(BatchNorm, TrainModeOutputMomentsMatchScaleAndShift) {
  Rng rng(5);
  const Shape s{3, 4, 5, 5};
  auto x = random_tensor<double>(s, rng, -3.0, 5.0);
  auto gamma = random_tensor<double>(Shape{4, 1, 1, 1}, rng, 0.5, 2.0);
  auto beta = random_tensor<double>(Shape{4, 1, 1, 1}, rng);
  NormStats<double> st(4);
  st.training = true;
  auto y = batch_norm(Var<double>(x), Var<double>(gamma), Var<double>(beta), st).value();
  const double count = s.n * s.plane();
  for (int c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) mean += y.plane(n, c)[i];
    mean /= count;
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) var += std::pow(y.plane(n, c)[i] - mean, 2);
    var /= count;
    EXPECT_NEAR(mean, beta[c], 1e-4);
    EXPECT_NEAR(var, gamma[c] * gamma[c], 1e-4);
  }
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
  NormStats<double> st(1);
  st.training = true;
  Tensor<double> x(Shape{1, 1, 1, 4});
  x.vec() = {1, 2, 3, 6};  // mean 3, unbiased variance 14 / 3
  Var<double> g(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)), b(Tensor<double>(Shape{1, 1, 1, 1}));
  batch_norm(Var<double>(x), g, b, st);
  EXPECT_NEAR(st.running_mean[0], 0.3, 1e-12);
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
}

TEST(BatchNorm, TrainModeRejectsSingleElementChannels) {
  NormStats<double> st(1);
  st.training = true;
  Var<double> g(Tensor<double>(Shape{1, 1, 1, 1}, 1.0)), b(Tensor<double>(Shape{1, 1, 1, 1}));
  EXPECT_THROW(batch_norm(Var<double>(Tensor<double>(Shape{1, 1, 1, 1})), g, b, st), ShapeError);
}

TEST(Upsample, ConstantStaysConstant) {
  auto y = upsample(Var<double>(Tensor<double>(Shape{1, 1, 2, 2}, 3.0)), 4, 4).value();
  for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(Upsample, SameSizeIsIdentity) {
  Rng rng(2);
  auto x = random_tensor<double>(Shape{2, 3, 3, 5}, rng);
  EXPECT_EQ(upsample(Var<double>(x), 3, 5).value(), x);
}

// Half-pixel centres: output column o samples source (o + 0.5) / 2 - 0.5,
// clamped at 0, giving weights 0, 0.25, 0.75, 1 across [0, 1].
TEST(Upsample, TwoByTwoToTwoByFourHandEvaluation) {
  Tensor<double> t(Shape{1, 1, 2, 2});
  t.vec() = {0, 1, 0, 1};
  auto y = upsample(Var<double>(t), 2, 4).value();
  const std::vector<double> row{0.0, 0.25, 0.75, 1.0};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y(0, 0, r, c), row[c]);
  EXPECT_DOUBLE_EQ((y(0, 0, 0, 1) + y(0, 0, 0, 2)) / 2.0, 0.5);
}

TEST(Upsample, RejectsShrinking) {
  EXPECT_THROW(upsample(Var<double>(Tensor<double>(Shape{1, 1, 4, 4})), 2, 4), ShapeError);
}

TEST(GlobalAvgPool, ArithmeticMeanAndLinearity) {
  Tensor<double> t(Shape{1, 1, 2, 2});
  t.vec() = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(global_avg_pool(Var<double>(t)).value()[0], 2.5);
  EXPECT_DOUBLE_EQ(global_avg_pool(scale(Var<double>(t), 3.0)).value()[0], 7.5);
  auto c = global_avg_pool(Var<double>(Tensor<double>(Shape{2, 3, 4, 4}, -1.5))).value();
  EXPECT_EQ(c.shape(), (Shape{2, 3, 1, 1}));
  for (double v : c.vec()) EXPECT_DOUBLE_EQ(v, -1.5);
}

TEST(Conv2d, MatchesDirectReflectPaddedConvolution) {
  Rng rng(9);
  for (int trial = 0; trial < 24; ++trial) {
    const int k = trial % 3 == 0 ? 1 : (trial % 3 == 1 ? 3 : 7);
    const int stride = 1 + trial % 2;
    const int groups = trial % 4 == 3 ? 2 : 1;
    const Shape s{2, 4, 3 + trial % 5, 2 + trial % 6};
    const int cout = 6;
    auto x = random_tensor<double>(s, rng);
    auto w = random_tensor<double>(Shape{cout, s.c / groups, k, k}, rng);
    auto y = conv2d(Var<double>(x), Var<double>(w), {stride, groups}).value();
    const int oh = (s.h + stride - 1) / stride, ow = (s.w + stride - 1) / stride;
    ASSERT_EQ(y.shape(), (Shape{s.n, cout, oh, ow}));
    const int cin_g = s.c / groups, cout_g = cout / groups;
    for (int n = 0; n < s.n; ++n)
      for (int o = 0; o < cout; ++o)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double acc = 0;
            const int g = o / cout_g;
            for (int ci = 0; ci < cin_g; ++ci)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = testing::reflect(oy * stride + ky - k / 2, s.h);
                  const int ix = testing::reflect(ox * stride + kx - k / 2, s.w);
                  acc += w(o, ci, ky, kx) * x(n, g * cin_g + ci, iy, ix);
                }
            EXPECT_NEAR(y(n, o, oy, ox), acc, 1e-12);
          }
  }
}

TEST(Conv2d, ConstantMapGivesConstantOutputUnderReflection) {
  Rng rng(4);
  auto w = random_tensor<double>(Shape{2, 3, 7, 7}, rng);
  auto y = conv2d(Var<double>(Tensor<double>(Shape{1, 3, 4, 4}, 2.0)), Var<double>(w)).value();
  for (int c = 0; c < 2; ++c)
    for (int i = 1; i < 16; ++i) EXPECT_NEAR(y.plane(0, c)[i], y.plane(0, c)[0], 1e-12);
}

TEST(Conv2d, HandlesOneByOneSpatialExtent) {
  Rng rng(6);
  auto w = random_tensor<double>(Shape{2, 3, 3, 3}, rng);
  Tensor<double> x(Shape{1, 3, 1, 1});
  x.vec() = {1.0, -2.0, 0.5};
  auto y = conv2d(Var<double>(x), Var<double>(w)).value();
  for (int o = 0; o < 2; ++o) {
    double acc = 0;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 9; ++i) acc += w.plane(o, c)[i] * x[c];
    EXPECT_NEAR(y[o], acc, 1e-12);
  }
}

TEST(CrossEntropy, EqualLogitsGiveLnTwo) {
  Var<double> logits(Tensor<double>(Shape{2, 2, 3, 3}, 0.7));
  std::vector<std::uint8_t> labels(18, 0);
  for (std::size_t i = 0; i < labels.size(); i += 2) labels[i] = 1;
  EXPECT_NEAR(cross_entropy(logits, labels).value()[0], std::log(2.0), 1e-15);
}

TEST(CrossEntropy, MatchesDirectLogSoftmax) {
  Rng rng(8);
  auto t = random_tensor<double>(Shape{1, 2, 2, 2}, rng, -4.0, 4.0);
  std::vector<std::uint8_t> labels{1, 0, 0, 1};
  double expect = 0;
  for (int i = 0; i < 4; ++i) {
    const double a = t.plane(0, 0)[i], b = t.plane(0, 1)[i];
    expect += -std::log(std::exp(labels[i] ? b : a) / (std::exp(a) + std::exp(b)));
  }
  EXPECT_NEAR(cross_entropy(Var<double>(t), labels).value()[0], expect / 4, 1e-12);
}

TEST(Broadcast, ChannelVectorAgainstMap) {
  Tensor<double> a(Shape{1, 2, 1, 2});
  a.vec() = {1, 2, 3, 4};
  Tensor<double> b(Shape{1, 2, 1, 1});
  b.vec() = {10, 100};
  auto y = (Var<double>(a) * Var<double>(b)).value();
  EXPECT_EQ(y.vec(), (AlignedVector<double>{10, 20, 300, 400}));
  EXPECT_THROW(Var<double>(a) + Var<double>(Tensor<double>(Shape{1, 3, 1, 1})), ShapeError);
}

TEST(Autograd, GradientsAccumulateAcrossReuse) {
  Var<double> x(Tensor<double>(Shape{1, 1, 1, 1}, 3.0), true);
  auto y = x * x + x;  // dy/dx = 2x + 1
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  Var<double> x(Tensor<double>(Shape{1, 1, 1, 1}, 3.0), true);
  NoGradGuard guard;
  EXPECT_FALSE((x * x).requires_grad());
}

}  // namespace
}  // namespace mmchange
