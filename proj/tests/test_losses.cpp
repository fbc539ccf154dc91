#include <gtest/gtest.h>

#include <cmath>

#include "qualiteacher/evaluation.hpp"
#include "qualiteacher/gradcheck.hpp"
#include "qualiteacher/losses.hpp"
#include "qualiteacher/synthbench.hpp"

using namespace qualiteacher;

namespace {

const IqaConfig kCfg{};

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, 1);
  for (auto& v : img.data()) v = rng.uniform();
  return img;
}

// Scalar-loop oracle for the multi-scale gradient L1.
double perceptual_oracle(const Image& y, const Image& t) {
  int h = y.height(), w = y.width();
  std::vector<double> r(y.data().size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = y.data()[i] - t.data()[i];
  double total = 0.0;
  for (int s = 0; s < 3; ++s) {
    double sh = 0.0, sv = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j + 1 < w; ++j) sh += std::abs(r[i * w + j + 1] - r[i * w + j]);
    for (int i = 0; i + 1 < h; ++i)
      for (int j = 0; j < w; ++j) sv += std::abs(r[(i + 1) * w + j] - r[i * w + j]);
    total += sh / (h * (w - 1)) + sv / ((h - 1) * w);
    if (s == 2) break;
    std::vector<double> next(static_cast<std::size_t>(h / 2 * (w / 2)));
    for (int i = 0; i < h / 2; ++i)
      for (int j = 0; j < w / 2; ++j)
        next[i * (w / 2) + j] = 0.25 * (r[2 * i * w + 2 * j] + r[2 * i * w + 2 * j + 1] + r[(2 * i + 1) * w + 2 * j] +
                                        r[(2 * i + 1) * w + 2 * j + 1]);
    r = std::move(next);
    h /= 2;
    w /= 2;
  }
  return total;
}

Image affine(const Image& img, double a, double b) {
  Image out = img;
  for (auto& v : out.data()) v = std::clamp(a * v + b, 0.0, 1.0);
  return out;
}

}  // namespace

TEST(Reconstruction, WeightedMeanAbsoluteError) {
  const Image y = random_image(16, 16, 1), t = random_image(16, 16, 2);
  const WeightMap wm = blockwise_weight_map(t, kCfg);
  double oracle = 0.0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) oracle += wm.at(i, j) * std::abs(y.at(i, j) - t.at(i, j));
  EXPECT_NEAR(weighted_rec_loss(y, t, wm), oracle / 256.0, 1e-14);
  EXPECT_EQ(weighted_rec_loss(t, t, wm), 0.0);
}

TEST(Reconstruction, UniformMapIsPlainL1AndShapesChecked) {
  const Image y(8, 8, 1, 0.3), t(8, 8, 1, 0.5);
  EXPECT_NEAR(weighted_rec_loss(y, t, uniform_weight_map(8, 8)), 0.2, 1e-15);
  EXPECT_THROW(weighted_rec_loss(y, Image(8, 4, 1), uniform_weight_map(8, 8)), std::invalid_argument);
  EXPECT_THROW(weighted_rec_loss(y, t, uniform_weight_map(4, 8)), std::invalid_argument);
}

TEST(Perceptual, MatchesScalarOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image y = random_image(24, 24, s), t = random_image(24, 24, s + 100);
    EXPECT_NEAR(perceptual_proxy_loss(y, t), perceptual_oracle(y, t), 1e-12);
  }
}

TEST(Perceptual, InvariantToConstantOffsetAndRejectsOddSizes) {
  const Image t = random_image(16, 16, 3);
  EXPECT_NEAR(perceptual_proxy_loss(affine(t, 1.0, 0.0), t), 0.0, 1e-15);
  Image shifted = t;
  for (auto& v : shifted.data()) v += 0.1;
  EXPECT_NEAR(perceptual_proxy_loss(shifted, t), 0.0, 1e-12);
  EXPECT_THROW(perceptual_proxy_loss(Image(18, 16, 1), Image(18, 16, 1)), std::invalid_argument);
}

TEST(Preference, NegLogSigmoidStableAndClamped) {
  double dz = 0.0;
  EXPECT_NEAR(neg_log_sigmoid(0.0, &dz), std::log(2.0), 1e-15);
  EXPECT_NEAR(dz, -0.5, 1e-15);
  for (double z : {-5.0, -0.3, 0.7, 12.0}) EXPECT_NEAR(neg_log_sigmoid(z), -std::log(1.0 / (1.0 + std::exp(-z))), 1e-12);
  EXPECT_NEAR(neg_log_sigmoid(-1000.0, &dz), 30.0 + std::log1p(std::exp(-30.0)), 1e-12);
  EXPECT_EQ(dz, 0.0);
  EXPECT_TRUE(std::isfinite(neg_log_sigmoid(1e6)));
}

TEST(Preference, ValuesMatchDefinition) {
  const ModelParams p = ModelParams::initialized(Architecture{}, 2);
  const InjectionSnapshot snap = snapshot_injection_weights(p);
  const Image input = degrade(generate_clean(3), DegradationSpec{0.15, 0, 0.0, 1.0, 4});
  PseudoLabel floor_label;
  floor_label.ensemble = 0.6;
  const PreferenceParams pp;
  const PreferenceResult r = preference_loss(p, input, &floor_label, pp, snap, kCfg);
  const double sh = ensemble_score(restore(p, input, 0.7), kCfg);
  const double sl = ensemble_score(restore(p, input, 0.2), kCfg);
  EXPECT_DOUBLE_EQ(r.score_high, sh);
  EXPECT_DOUBLE_EQ(r.score_low, sl);
  EXPECT_NEAR(r.l1, std::log1p(std::exp(-5.0 * (sh - sl - 0.05))), 1e-12);
  EXPECT_NEAR(r.l2, std::log1p(std::exp(-5.0 * (sh - 0.6))), 1e-12);
  EXPECT_EQ(r.reg, 0.0);
  EXPECT_FALSE(r.l2_skipped);
  EXPECT_DOUBLE_EQ(r.value(), r.l1 + r.l2 + r.reg);
}

TEST(Preference, FloorTermSkippedWithoutBankEntry) {
  const ModelParams p = ModelParams::initialized(Architecture{}, 2);
  const PreferenceResult r = preference_loss(p, generate_clean(1), nullptr, {}, snapshot_injection_weights(p), kCfg);
  EXPECT_TRUE(r.l2_skipped);
  EXPECT_EQ(r.l2, 0.0);
}

TEST(Preference, RequiresSnapshotAndOrderedScores) {
  const ModelParams p = ModelParams::initialized(Architecture{}, 2);
  const Image img = generate_clean(1);
  EXPECT_THROW(preference_loss(p, img, nullptr, {}, InjectionSnapshot{}, kCfg), std::logic_error);
  PreferenceParams bad;
  bad.s_low = 0.8;
  EXPECT_THROW(preference_loss(p, img, nullptr, bad, snapshot_injection_weights(p), kCfg), std::invalid_argument);
}

TEST(Preference, TeacherFloorReceivesNoGradient) {
  // the floor label's image is never read: changing it leaves the gradients untouched
  const ModelParams p = ModelParams::initialized(Architecture{}, 5);
  const Image input = generate_clean(6);
  const InjectionSnapshot snap = snapshot_injection_weights(p);
  PseudoLabel a, b;
  a.ensemble = b.ensemble = 0.5;
  a.image = Image(24, 24, 1, 0.1);
  b.image = Image(24, 24, 1, 0.9);
  ParamGrads ga = p.zero_grads(), gb = p.zero_grads();
  preference_loss(p, input, &a, {}, snap, kCfg, &ga);
  preference_loss(p, input, &b, {}, snap, kCfg, &gb);
  EXPECT_EQ(ga, gb);
}

TEST(Cropped, SameRegionIdentityStubIsExactlyConsistent) {
  const RestoreFn identity = [](const Image& x, double) { return x; };
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const Image img = generate_clean(40 + i);
    const CropRegion r = random_quarter_region(24, 24, rng);
    EXPECT_EQ(cropped_consistency(identity, img, 0.5, r, r, kCfg).value, 0.0);
  }
}

TEST(Cropped, PixelAffineStubBelowMicroTolerance) {
  const RestoreFn stub = [](const Image& x, double s) { return affine(x, 0.8 + 0.2 * s, 0.05); };
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Image img = generate_clean(60 + i);
    const CropRegion r = random_quarter_region(24, 24, rng);
    EXPECT_LT(cropped_consistency(stub, img, rng.uniform(), r, r, kCfg).value, 1e-6);
  }
}

TEST(Cropped, TwinSceneHalvesAreIdentical) {
  const Image scene = twin_scene(3);
  EXPECT_EQ(crop(scene, {0, 0, 12, 24}), crop(scene, {12, 0, 12, 24}));
  EXPECT_THROW(twin_scene(3, 24, 23), std::invalid_argument);
}

TEST(Cropped, PatchedQuadrantStandsOutAgainstItsTwin) {
  const RestoreFn identity = [](const Image& x, double) { return x; };
  const PatchProbe probe = patch_probe(identity, 20, 5, kCfg);
  ASSERT_EQ(probe.gaps.size(), 20u);
  EXPECT_GT(probe.mean_gap, 0.02);
  EXPECT_GT(probe.min_gap, 0.0);
  const PatchProbe clean = patch_probe(identity, 20, 5, kCfg, false);
  EXPECT_EQ(clean.max_gap, 0.0);
}

TEST(Cropped, AffineStubSilentOnUnpatchedTwins) {
  const RestoreFn stub = [](const Image& x, double s) { return affine(x, 0.8 + 0.2 * s, 0.05); };
  EXPECT_LT(patch_probe(stub, 20, 6, kCfg, false).max_gap, 1e-6);
}

TEST(Cropped, ModelLossUsesOneRegionForBothOrders) {
  const ModelParams p = ModelParams::initialized(Architecture{}, 8);
  const Image img = generate_clean(9);
  const CropRegion r{12, 0, 12, 12};
  const CroppedResult cr = cropped_consistency_loss(p, img, 0.7, r, kCfg);
  const double s1 = ensemble_score(crop(restore(p, img, 0.7), r), kCfg);
  const double s2 = ensemble_score(restore(p, crop(img, r), 0.7), kCfg);
  EXPECT_DOUBLE_EQ(cr.s1, s1);
  EXPECT_DOUBLE_EQ(cr.s2, s2);
  EXPECT_DOUBLE_EQ(cr.value, std::abs(s1 - s2));
  EXPECT_THROW(cropped_consistency_loss(p, Image(20, 24, 1), 0.7, r, kCfg), std::invalid_argument);
}

TEST(Cropped, RandomRegionsAreQuarterSizedAndInBounds) {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const CropRegion r = random_quarter_region(24, 32, rng);
    EXPECT_EQ(r.h, 12);
    EXPECT_EQ(r.w, 16);
    EXPECT_TRUE(region_fits(r, 24, 32));
  }
}

TEST(Total, UnitCoefficientsSumComponents) {
  LossBreakdown b;
  b.rec = 0.1;
  b.per = 0.2;
  b.pref_l1 = 0.3;
  b.pref_l2 = 0.4;
  b.pref_reg = 0.05;
  b.cropped = 0.6;
  EXPECT_NEAR(total_loss(b), 1.65, 1e-15);
  EXPECT_NEAR(total_loss(b, {2.0, 0.0, 1.0, 0.0}), 0.2 + 0.75, 1e-15);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3})
    for (const auto& r : gradcheck_losses(seed, 10)) EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst;
}
