#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "qualiteacher/synthbench.hpp"

using namespace qualiteacher;

TEST(Clean, DeterministicPerSeedAndDistinctAcrossSeeds) {
  EXPECT_EQ(generate_clean(3), generate_clean(3));
  EXPECT_NE(generate_clean(3), generate_clean(4));
  EXPECT_EQ(generate_clean(3, 16, 20, 3), generate_clean(3, 16, 20, 3));
}

TEST(Clean, MeanInRangeAndTextured) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Image img = generate_clean(s);
    const double m = mean_value(img);
    EXPECT_GE(m, 0.35);
    EXPECT_LE(m, 0.65);
    double energy = 0.0;
    for (int y = 0; y < img.height(); ++y)
      for (int x = 1; x < img.width(); ++x) energy += std::abs(img.at(y, x) - img.at(y, x - 1));
    EXPECT_GT(energy, 0.0);
  }
}

TEST(Degrade, IdentitySpecReturnsInput) {
  const Image img = generate_clean(7);
  EXPECT_EQ(degrade(img, DegradationSpec{}), img);
}

TEST(Degrade, BlurMatchesTwoDimensionalBoxWithReplicatedBorders) {
  const Image img = generate_clean(8, 12, 10);
  for (int r : {1, 2}) {
    DegradationSpec d;
    d.blur_radius = r;
    const Image out = degrade(img, d);
    const double n = (2 * r + 1) * (2 * r + 1);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += img.at(std::clamp(y + dy, 0, img.height() - 1), std::clamp(x + dx, 0, img.width() - 1));
        EXPECT_NEAR(out.at(y, x), acc / n, 1e-12);
      }
  }
}

TEST(Degrade, VeilAndGammaClosedForm) {
  const Image img(4, 4, 1, 0.5);
  DegradationSpec d;
  d.veil_strength = 0.5;
  d.gamma = 2.0;
  const double expected = std::pow(0.5 * 0.5 + 0.5 * kVeilLevel, 2.0);
  const Image out = degrade(img, d);
  for (double v : out.data()) EXPECT_NEAR(v, expected, 1e-15);
}

TEST(Degrade, NoiseHasRequestedSpread) {
  const Image img(64, 64, 1, 0.5);
  DegradationSpec d;
  d.noise_sigma = 0.05;
  d.seed = 99;
  const Image out = degrade(img, d);
  double m = 0.0, v = 0.0;
  for (double x : out.data()) m += x;
  m /= out.size();
  for (double x : out.data()) v += (x - m) * (x - m);
  v /= out.size();
  EXPECT_NEAR(m, 0.5, 0.005);
  EXPECT_NEAR(std::sqrt(v), 0.05, 0.004);
  EXPECT_EQ(degrade(img, d), out);
}

TEST(Degrade, SampledSpecsStayInRange) {
  Rng rng(5);
  for (const DegradationRange& r : {paired_range(), unpaired_range()})
    for (int i = 0; i < 200; ++i) {
      const DegradationSpec s = sample_degradation(r, rng);
      EXPECT_GE(s.noise_sigma, r.noise_lo);
      EXPECT_LE(s.noise_sigma, r.noise_hi);
      EXPECT_GE(s.blur_radius, r.blur_lo);
      EXPECT_LE(s.blur_radius, r.blur_hi);
      EXPECT_GE(s.veil_strength, r.veil_lo);
      EXPECT_LE(s.veil_strength, r.veil_hi);
      EXPECT_GE(s.gamma, r.gamma_lo);
      EXPECT_LE(s.gamma, r.gamma_hi);
    }
}

TEST(Degrade, UnpairedStreamScoresLowerThanClean) {
  const IqaConfig cfg;
  Rng rng(6);
  double clean = 0.0, degraded = 0.0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const Image img = generate_clean(2000 + s);
    clean += ensemble_score(img, cfg);
    degraded += ensemble_score(degrade(img, sample_degradation(unpaired_range(), rng)), cfg);
  }
  EXPECT_LT(degraded, clean);
}

TEST(PatchAttack, ConfinedToOneQuadrant) {
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    const Image img = generate_clean(30 + i);
    const PatchAttack atk = adversarial_patch_attack(img, rng);
    EXPECT_EQ(atk.patched.h, 12);
    EXPECT_EQ(atk.patched.w, 12);
    EXPECT_TRUE(atk.patched.x0 == 0 || atk.patched.x0 == 12);
    EXPECT_TRUE(atk.patched.y0 == 0 || atk.patched.y0 == 12);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        const bool inside = y >= atk.patched.y0 && y < atk.patched.y0 + 12 && x >= atk.patched.x0 && x < atk.patched.x0 + 12;
        if (!inside) EXPECT_EQ(atk.image.at(y, x), img.at(y, x));
        else EXPECT_LE(std::abs(atk.image.at(y, x) - img.at(y, x)), 0.06 + 1e-15);
      }
  }
}

TEST(PatchAttack, InflatesSharpness) {
  const IqaConfig cfg;
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Image img = generate_clean(60 + i);
    const PatchAttack atk = adversarial_patch_attack(img, rng);
    EXPECT_GT(score_sharpness(atk.image, cfg), score_sharpness(img, cfg));
    EXPECT_GT(score_sharpness(crop(atk.image, atk.patched), cfg), score_sharpness(crop(img, atk.patched), cfg));
  }
}

TEST(PatchAttack, ZeroAmplitudeIsIdentity) {
  Rng rng(1);
  const Image img = generate_clean(1);
  EXPECT_EQ(adversarial_patch_attack(img, rng, 0.0).image, img);
  EXPECT_THROW(adversarial_patch_attack(Image(8, 24, 1), rng), std::invalid_argument);
}

TEST(Calibration, CorpusIsDeterministicAndSized) {
  const auto a = calibration_corpus(8);
  const auto b = calibration_corpus(8);
  ASSERT_EQ(a.size(), 8u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[5], generate_clean(5));
}
