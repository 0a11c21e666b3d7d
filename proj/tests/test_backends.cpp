#include <gtest/gtest.h>

#include <random>

#include "priorscale/backends.hpp"
#include "support.hpp"

using namespace priorscale;

namespace {

Image block_constant_image(int h, int w) {
  Image img(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = static_cast<float>(((y / 8) * 7 + (x / 8) * 3) % 10) / 10.0f;
      for (int c = 0; c < 3; ++c) img(c, y, x) = v;
    }
  }
  return img;
}

struct MockFixture : ::testing::Test {
  NoiseSchedule sched = build_schedule(kDefaultTrainSteps);
  Latent anchor = testing_support::fixed_grid(4, 16, 16);
};

}  // namespace

TEST(HeadSiteId, Format) { EXPECT_EQ(head_site_id("mid", 2), "mid/h2"); }

TEST(Cfg, ScaleAtMostOneReturnsConditional) {
  const Latent cond = testing_support::fixed_grid(1, 2, 2);
  const Latent uncond(1, 2, 2, 5.0);
  EXPECT_EQ(apply_cfg(cond, uncond, 0.0), cond);
  EXPECT_EQ(apply_cfg(cond, uncond, 1.0), cond);
  const Latent g = apply_cfg(cond, uncond, 3.0);
  EXPECT_DOUBLE_EQ(g(0, 1, 0), 5.0 + 3.0 * (cond(0, 1, 0) - 5.0));
}

TEST(MockCodec, BlockConstantRoundTrip) {
  const MockCodec codec;
  const Image img = block_constant_image(32, 48);
  const Latent z = codec.encode(img);
  EXPECT_EQ(z.shape(), (Shape{4, 4, 6}));
  EXPECT_EQ(codec.decode(z), img);
}

TEST(MockCodec, ConstantImageGivesConstantLatent) {
  const MockCodec codec;
  const Latent z = codec.encode(Image(3, 16, 16, 0.25f));
  for (double v : z.data()) EXPECT_EQ(v, 0.25);
  EXPECT_THROW(codec.encode(Image(3, 12, 16)), ArgumentError);
}

TEST(MockTextConditioner, TokenisationAndDeterminism) {
  const MockTextConditioner enc;
  EXPECT_EQ(enc.encode("").rows(), 1);
  EXPECT_EQ(enc.encode("A  cat\tsits").rows(), 4);
  EXPECT_EQ(enc.encode("a cat"), enc.encode("A CAT"));
  std::string long_text;
  for (int i = 0; i < 200; ++i) long_text += "w" + std::to_string(i) + " ";
  EXPECT_EQ(enc.encode(long_text).rows(), 77);
  EXPECT_EQ(enc.word_budget(), 76);
}

TEST_F(MockFixture, OracleNoiseReconstructsTarget) {
  const OracleDenoiser oracle(anchor, sched);
  std::mt19937_64 rng(1);
  const Latent zt = add_noise(anchor, 700, testing_support::random_latent(rng, 4, 16, 16), sched);
  const Latent eps = oracle.predict_noise(NoiseRequest{zt, 700, "x", std::nullopt, nullptr});
  EXPECT_LT(max_abs_diff(predict_z0(zt, eps, 700, sched), anchor), 1e-12);

  const RegionSpec spec{0, 4, 8, 8, 8};
  const Latent crop_zt = crop(zt, spec);
  const Latent crop_eps = oracle.predict_noise(NoiseRequest{crop_zt, 700, "x", spec, nullptr});
  EXPECT_LT(max_abs_diff(predict_z0(crop_zt, crop_eps, 700, sched), crop(anchor, spec)), 1e-12);
}

TEST_F(MockFixture, GuidanceOffReturnsConditionalBranch) {
  MockDenoiserOptions opts;
  opts.guidance_scale = 0.0;
  const MockDenoiser cfg_off(anchor, sched, opts);
  opts.guidance_scale = 1.0;
  const MockDenoiser unit(anchor, sched, opts);
  const Latent z = testing_support::fixed_grid(4, 16, 16, 0.3, 0.2);
  const NoiseRequest req{z, 300, "a red barn", std::nullopt, nullptr};
  EXPECT_EQ(cfg_off.predict_noise(req), unit.predict_noise(req));
  opts.guidance_scale = 7.5;
  const MockDenoiser guided(anchor, sched, opts);
  EXPECT_NE(guided.predict_noise(req), cfg_off.predict_noise(req));
}

TEST_F(MockFixture, DisabledOverrideIsBitwiseUnmodified) {
  const MockDenoiser model(anchor, sched);
  const Latent z = testing_support::fixed_grid(4, 16, 16, 0.3, 0.2);
  const Latent plain = model.predict_noise(NoiseRequest{z, 300, "a cat", std::nullopt, nullptr});
  RegionalAttention no_priors;
  no_priors.global_prompt = "a cat on a sofa";
  EXPECT_EQ(model.predict_noise(NoiseRequest{z, 300, "a cat", std::nullopt, &no_priors}), plain);
  AttentionPriorSet empty;
  RegionalAttention empty_priors{&empty, "a cat on a sofa"};
  EXPECT_EQ(model.predict_noise(NoiseRequest{z, 300, "a cat", std::nullopt, &empty_priors}), plain);
}

TEST_F(MockFixture, PriorsChangeOutputThroughComposeHook) {
  const MockDenoiser model(anchor, sched);
  const Latent z = testing_support::fixed_grid(4, 16, 16, 0.3, 0.2);
  const AttentionPriorSet priors = model.capture_attention(z, 300, "a cat on a sofa");
  ASSERT_EQ(priors.maps.size(), 3u);
  EXPECT_EQ(priors.maps[0].site_id, "mid/h0");
  EXPECT_EQ(priors.maps[0].spatial_height, 8);
  EXPECT_EQ(priors.maps[2].site_id, "up/h0");
  for (const auto& m : priors.maps) EXPECT_TRUE(is_row_stochastic(m.scores));

  int compose_calls = 0;
  RegionalAttention counting{&priors, "a cat on a sofa",
                             [&](const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& a,
                                 const Matrix& vg) {
                               ++compose_calls;
                               return compose_attention(q, k, v, a, vg);
                             }};
  const Latent plain = model.predict_noise(NoiseRequest{z, 300, "a cat", std::nullopt, nullptr});
  const Latent with = model.predict_noise(NoiseRequest{z, 300, "a cat", std::nullopt, &counting});
  EXPECT_EQ(compose_calls, 3);  // conditional branch only, once per head
  EXPECT_NE(with, plain);
}

TEST_F(MockFixture, MisshapedPriorIsRejected) {
  const MockDenoiser model(anchor, sched);
  const Latent z = testing_support::fixed_grid(4, 16, 16);
  AttentionPriorSet bad;
  bad.maps.push_back(AttentionMap{4, 4, "mid/h0", 2, Matrix::Constant(16, 3, 1.0 / 3)});
  RegionalAttention ra{&bad, "a cat"};
  EXPECT_THROW(model.predict_noise(NoiseRequest{z, 300, "a cat", std::nullopt, &ra}), ArgumentError);
}

TEST_F(MockFixture, CountingDecoratorForwards) {
  auto inner = std::make_shared<OracleDenoiser>(anchor, sched, 16);
  const CountingDenoiser counting(inner);
  const Latent z = testing_support::fixed_grid(4, 16, 16);
  EXPECT_EQ(counting.predict_noise(NoiseRequest{z, 5, "", std::nullopt, nullptr}),
            inner->predict_noise(NoiseRequest{z, 5, "", std::nullopt, nullptr}));
  EXPECT_TRUE(counting.capture_attention(z, 5, "p").empty());
  EXPECT_EQ(counting.predict_calls(), 1u);
  EXPECT_EQ(counting.capture_calls(), 1u);
  EXPECT_EQ(counting.native_region_size(), 16);
}

TEST(MockCaptioner, DescribesAndCounts) {
  const MockCaptioner cap;
  Image red(3, 8, 8, 0.0f);
  for (float& v : red.plane(0)) v = 0.9f;
  EXPECT_NE(cap.describe(red, "describe").find("warm reddish"), std::string::npos);
  EXPECT_THROW(cap.describe(red, ""), CaptionerError);
  EXPECT_EQ(cap.calls(), 2u);
}
