#include <gtest/gtest.h>

#include <random>

#include "oracles/frozen.hpp"
#include "priorscale/wavelet.hpp"
#include "support.hpp"

using namespace priorscale;
using testing_support::fixed_grid;
using testing_support::flat;

namespace {

void expect_values(const Latent& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.data()[i], want[i], tol) << i;
}

double dot(const Latent& a, const Latent& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace

TEST(Haar, BlockOfOnes) {
  const auto d = haar_analysis(Latent(1, 2, 2, 1.0));
  EXPECT_EQ(d.ll(0, 0, 0), 2.0);
  EXPECT_EQ(d.lh(0, 0, 0), 0.0);
  EXPECT_EQ(d.hl(0, 0, 0), 0.0);
  EXPECT_EQ(d.hh(0, 0, 0), 0.0);
}

TEST(Haar, IdentityBlock) {
  Latent x(1, 2, 2);
  x(0, 0, 0) = 1;
  x(0, 1, 1) = 1;
  const auto d = haar_analysis(x);
  EXPECT_EQ(d.ll(0, 0, 0), 1.0);
  EXPECT_EQ(d.lh(0, 0, 0), 0.0);
  EXPECT_EQ(d.hl(0, 0, 0), 0.0);
  EXPECT_EQ(d.hh(0, 0, 0), 1.0);
}

TEST(Haar, MatchesFrozenOracle) {
  const auto d = haar_analysis(fixed_grid(1, 4, 4));
  expect_values(d.ll, oracle::kHaarLL, 1e-14);
  expect_values(d.lh, oracle::kHaarLH, 1e-14);
  expect_values(d.hl, oracle::kHaarHL, 1e-14);
  expect_values(d.hh, oracle::kHaarHH, 1e-14);
}

TEST(Haar, MatchesPerBlockMatrixOracle) {
  std::mt19937_64 rng(2);
  const Latent x = testing_support::random_latent(rng, 2, 8, 8);
  const auto d = haar_analysis(x);
  // Rows of the orthonormal 4x4 Haar matrix applied to (a, b, c, d).
  const double m[4][4] = {{.5, .5, .5, .5}, {.5, -.5, .5, -.5}, {.5, .5, -.5, -.5}, {.5, -.5, -.5, .5}};
  const Latent* bands[4] = {&d.ll, &d.lh, &d.hl, &d.hh};
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int xx = 0; xx < 4; ++xx) {
        const double v[4] = {x(c, 2 * y, 2 * xx), x(c, 2 * y, 2 * xx + 1), x(c, 2 * y + 1, 2 * xx),
                             x(c, 2 * y + 1, 2 * xx + 1)};
        for (int b = 0; b < 4; ++b) {
          const double want = m[b][0] * v[0] + m[b][1] * v[1] + m[b][2] * v[2] + m[b][3] * v[3];
          EXPECT_NEAR((*bands[b])(c, y, xx), want, 1e-15);
        }
      }
    }
  }
}

TEST(Haar, OddDimensionsRejected) {
  EXPECT_THROW(haar_analysis(Latent(1, 3, 4)), ArgumentError);
}

TEST(Haar, SynthesisOfZeroAndConstantLL) {
  const Shape s{1, 2, 3};
  EXPECT_EQ(haar_synthesis(WaveletDecomposition<double>{Latent(s), Latent(s), Latent(s), Latent(s), 1}),
            Latent(1, 4, 6));
  const Latent out =
      haar_synthesis(WaveletDecomposition<double>{Latent(s, 3.0), Latent(s), Latent(s), Latent(s), 1});
  for (double v : out.data()) EXPECT_EQ(v, 1.5);
}

TEST(Haar, RoundTripAndParseval) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 2 * std::uniform_int_distribution<int>(1, 16)(rng);
    const int w = 2 * std::uniform_int_distribution<int>(1, 16)(rng);
    const Latent x = testing_support::random_latent(rng, 4, h, w);
    const auto d = haar_analysis(x);
    EXPECT_LE(max_abs_diff(haar_synthesis(d), x), 1e-6);
    const double bands = sum_squares(d.ll) + sum_squares(d.lh) + sum_squares(d.hl) + sum_squares(d.hh);
    EXPECT_NEAR(bands, sum_squares(x), 1e-6 * sum_squares(x));
  }
}

TEST(LowFrequency, ConstantDoublesPerLevel) {
  const Latent lf = low_frequency(Latent(2, 8, 8, 1.5), 1);
  EXPECT_EQ(lf.shape(), (Shape{2, 4, 4}));
  for (double v : lf.data()) EXPECT_EQ(v, 3.0);
  const Latent lf3 = low_frequency(Latent(1, 8, 8, 1.0), 3);
  for (double v : lf3.data()) EXPECT_EQ(v, 8.0);
}

TEST(LowFrequency, MatchesRecursionOracle) {
  expect_values(low_frequency(fixed_grid(2, 8, 8), 2), oracle::kLowFreq2, 1e-13);
  EXPECT_THROW(low_frequency(Latent(1, 6, 6), 2), ArgumentError);
  EXPECT_THROW(low_frequency(Latent(1, 8, 8), 0), ArgumentError);
}

TEST(LowFrequency, AdjointIdentity) {
  std::mt19937_64 rng(4);
  for (int levels = 1; levels <= 3; ++levels) {
    for (int trial = 0; trial < 10; ++trial) {
      const int b = 1 << levels;
      const Latent x = testing_support::random_latent(rng, 4, 2 * b, 3 * b);
      const Latent y = testing_support::random_latent(rng, 4, 2, 3);
      EXPECT_NEAR(dot(low_frequency(x, levels), y), dot(x, low_frequency_adjoint(y, levels)), 1e-10);
    }
  }
}

TEST(Padding, FoldIsAdjointOfReplicate) {
  std::mt19937_64 rng(6);
  const Latent x = testing_support::random_latent(rng, 2, 5, 7);
  const Latent y = testing_support::random_latent(rng, 2, 8, 8);
  const Latent px = detail::pad_replicate(x, 4);
  ASSERT_EQ(px.shape(), (Shape{2, 8, 8}));
  EXPECT_EQ(px(1, 7, 7), x(1, 4, 6));
  EXPECT_NEAR(dot(px, y), dot(x, detail::fold_replicate(y, 5, 7)), 1e-12);
}

TEST(Resize, IdentityAndConstants) {
  const Latent z = fixed_grid(3, 5, 7);
  EXPECT_EQ(resize(z, 5, 7), z);
  const Latent up = resize(Latent(1, 3, 3, 0.7), 11, 6);
  for (double v : up.data()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Resize, MatchesHandOracles) {
  Latent ramp(1, 2, 2);
  ramp(0, 1, 0) = 2;
  ramp(0, 1, 1) = 2;
  expect_values(resize(ramp, 4, 4), oracle::kResizeRamp, 1e-15);
  expect_values(resize(fixed_grid(1, 3, 3), 5, 5), oracle::kResize3to5, 1e-13);
  EXPECT_THROW(resize(ramp, 0, 4), ArgumentError);
}

TEST(GspLoss, ZeroForIdenticalAndMatchesOracle) {
  const Latent a = fixed_grid(4, 10, 12);
  const Latent b = fixed_grid(4, 10, 12, 0.23, 0.41);
  EXPECT_EQ(gsp_loss(a, a, 1), 0.0);
  EXPECT_NEAR(gsp_loss(a, b, 1), oracle::kGspLossLevel1, 1e-10);
  EXPECT_NEAR(gsp_loss(a, b, 2), oracle::kGspLossLevel2, 1e-10);
}

TEST(GspLoss, ConstantOffset) {
  const Latent a = fixed_grid(1, 8, 8);
  Latent b = a;
  for (auto& v : b.data()) v += 0.5;
  // 16 LL cells, each offset by 2 * 0.5.
  EXPECT_NEAR(gsp_loss(a, b, 1), 16.0, 1e-12);
}

TEST(GspGradient, ZeroWhenLowFrequencyMatches) {
  const auto s = build_schedule(kDefaultTrainSteps);
  const Latent a = fixed_grid(4, 8, 8);
  const auto d = haar_analysis(a);
  auto d2 = d;
  for (auto& v : d2.hh.data()) v += 1.0;  // high band only
  const Latent g = gsp_gradient(a, haar_synthesis(d2), 100, s, 1);
  for (double v : g.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(GspGradient, MatchesCentralDifferences) {
  const auto sched = build_schedule(kDefaultTrainSteps);
  std::mt19937_64 rng(17);
  for (int levels : {1, 2}) {
    for (int trial = 0; trial < 5; ++trial) {
      const int t = std::uniform_int_distribution<int>(1, 999)(rng);
      const int h = 10 + trial;  // odd sizes exercise the padding fold
      const Latent zt = testing_support::random_latent(rng, 4, h, 12);
      const Latent eps = testing_support::random_latent(rng, 4, h, 12);
      const Latent low = testing_support::random_latent(rng, 4, h, 12);
      const Latent band = structure_band(low, levels);
      auto loss = [&](const Latent& z) {
        return gsp_loss_from_band(band, predict_z0(z, eps, t, sched), levels);
      };
      const Latent g = gsp_gradient_from_band(band, predict_z0(zt, eps, t, sched), t, sched, levels);
      double worst = 0;
      for (std::size_t i = 0; i < zt.size(); i += 7) {
        Latent p = zt;
        Latent m = zt;
        const double hstep = 1e-4;
        p.data()[i] += hstep;
        m.data()[i] -= hstep;
        const double fd = (loss(p) - loss(m)) / (2 * hstep);
        const double denom = std::max(1.0, std::abs(fd));
        worst = std::max(worst, std::abs(fd - g.data()[i]) / denom);
      }
      EXPECT_LE(worst, 1e-4) << "levels=" << levels << " t=" << t;
    }
  }
}
