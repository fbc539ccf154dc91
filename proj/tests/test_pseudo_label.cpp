#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "qualiteacher/pseudo_label.hpp"
#include "qualiteacher/synthbench.hpp"

using namespace qualiteacher;

namespace {

PseudoLabel label(double ens, std::int64_t at, int aug = 1) {
  PseudoLabel pl;
  pl.image = Image(2, 2, 1, ens);
  pl.ensemble = ens;
  pl.created_at = at;
  pl.aug_id = aug;
  return pl;
}

std::array<PseudoLabel, 3> set_with_scores(const std::array<std::array<double, 3>, 3>& grid) {
  std::array<PseudoLabel, 3> out;
  for (int k = 0; k < 3; ++k) {
    out[k].scores.a_norm = grid[k][0];
    out[k].scores.b_norm = grid[k][1];
    out[k].scores.c_norm = grid[k][2];
    out[k].ensemble = ensemble(out[k].scores);
  }
  return out;
}

double two_pass_variance(double a, double b, double c) {
  const double m = (a + b + c) / 3.0;
  return ((a - m) * (a - m) + (b - m) * (b - m) + (c - m) * (c - m)) / 3.0;
}

ModelParams identity_teacher() {
  ModelParams p = ModelParams::initialized(Architecture{}, 1);
  std::fill(p.values(kHeadW).begin(), p.values(kHeadW).end(), 0.0);
  return p;
}

}  // namespace

TEST(Bins, FloorOfTenTimesScoreMergedAtTop) {
  EXPECT_EQ(score_bin(0.0), 0);
  EXPECT_EQ(score_bin(0.09), 0);
  EXPECT_EQ(score_bin(0.69), 6);
  EXPECT_EQ(score_bin(0.7), 7);
  EXPECT_EQ(score_bin(0.95), 7);
  EXPECT_EQ(score_bin(1.0), 7);
  EXPECT_EQ(score_bin(-0.2), 0);
  for (int b = 0; b <= kMaxBin; ++b) EXPECT_DOUBLE_EQ(bin_condition(b), b / 10.0);
}

TEST(Bins, MatchIntervalOracle) {
  for (int i = 0; i <= 1000; ++i) {
    const double s = i / 1000.0;
    int oracle = 0;
    for (int b = 1; b <= 7; ++b)
      if (s >= bin_condition(b)) oracle = b;
    EXPECT_EQ(score_bin(s), oracle) << s;
  }
}

TEST(DualDrop, UniformScoresAccepted) {
  EXPECT_TRUE(dual_drop(set_with_scores({{{0.6, 0.6, 0.6}, {0.6, 0.6, 0.6}, {0.6, 0.6, 0.6}}}), DropThresholds{}));
}

TEST(DualDrop, ScorerDisagreementRejected) {
  // one augmentation where the scorers disagree strongly; augmentations otherwise agree
  const auto set = set_with_scores({{{0.9, 0.5, 0.6}, {0.6, 0.6, 0.6}, {0.6, 0.6, 0.6}}});
  const auto d = dual_drop_diagnostics(set, DropThresholds{1.0, 1.0});
  EXPECT_NEAR(d.scorer_variance[0], two_pass_variance(0.9, 0.5, 0.6), 1e-15);
  EXPECT_NEAR(d.augmentation_variance[0], two_pass_variance(0.9, 0.6, 0.6), 1e-15);
  EXPECT_FALSE(dual_drop(set, DropThresholds{0.02, 1.0}));
  EXPECT_TRUE(dual_drop(set, DropThresholds{0.04, 1.0}));
}

TEST(DualDrop, AugmentationDisagreementRejected) {
  // every augmentation is internally consistent but they disagree with each other
  const auto set = set_with_scores({{{0.3, 0.3, 0.3}, {0.6, 0.6, 0.6}, {0.9, 0.9, 0.9}}});
  const auto d = dual_drop_diagnostics(set, DropThresholds{});
  for (double v : d.scorer_variance) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_NEAR(d.augmentation_variance[1], 0.06, 1e-15);
  EXPECT_FALSE(d.accepted);
  EXPECT_TRUE(dual_drop(set, DropThresholds{0.02, 0.07}));
}

TEST(DualDrop, ThresholdIsStrict) {
  // population variance of (0, 0, 0.3) is exactly 0.02
  const auto set = set_with_scores({{{0.0, 0.0, 0.3}, {0.0, 0.0, 0.3}, {0.0, 0.0, 0.3}}});
  EXPECT_NEAR(dual_drop_diagnostics(set, {}).scorer_variance[0], 0.02, 1e-15);
  EXPECT_TRUE(dual_drop(set, DropThresholds{0.0201, 0.02}));
  EXPECT_FALSE(dual_drop(set, DropThresholds{0.0199, 0.02}));
}

TEST(DualDrop, VarianceMatchesOracleOnRandomGrids) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    std::array<std::array<double, 3>, 3> g{};
    for (auto& row : g)
      for (auto& v : row) v = rng.uniform();
    const DropThresholds t{rng.uniform(0.0, 0.1), rng.uniform(0.0, 0.1)};
    bool oracle = true;
    for (int k = 0; k < 3; ++k) oracle = oracle && two_pass_variance(g[k][0], g[k][1], g[k][2]) < t.tau1;
    for (int m = 0; m < 3; ++m) oracle = oracle && two_pass_variance(g[0][m], g[1][m], g[2][m]) < t.tau2;
    EXPECT_EQ(dual_drop(set_with_scores(g), t), oracle);
  }
}

TEST(Bank, KeepsTopThree) {
  MemoryBank bank;
  bank.gate_update(1, {label(0.5, 0), label(0.7, 0), label(0.6, 0)});
  bank.gate_update(1, {label(0.8, 1), label(0.55, 1), label(0.4, 1)});
  const auto& e = bank.entries(1);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].ensemble, 0.8);
  EXPECT_EQ(e[1].ensemble, 0.7);
  EXPECT_EQ(e[2].ensemble, 0.6);
  EXPECT_EQ(bank.best(1)->ensemble, 0.8);
  EXPECT_EQ(bank.worst(1)->ensemble, 0.6);
}

TEST(Bank, TiesPreferNewerLabels) {
  MemoryBank bank;
  bank.gate_update(4, {label(0.5, 0, 1), label(0.5, 0, 2), label(0.5, 0, 3)});
  bank.gate_update(4, {label(0.5, 9, 1)});
  EXPECT_EQ(bank.best(4)->created_at, 9);
  EXPECT_EQ(bank.entries(4).size(), 3u);
}

TEST(Bank, EmptyCandidatesAndUnknownIds) {
  MemoryBank bank;
  bank.gate_update(2, {});
  EXPECT_TRUE(bank.empty(2));
  EXPECT_EQ(bank.best(2), nullptr);
  EXPECT_EQ(bank.worst(2), nullptr);
  EXPECT_EQ(bank.input_count(), 0u);
  EXPECT_EQ(bank.mean_score(), 0.0);
  EXPECT_FALSE(select_supervision(bank, 2).has_value());
}

TEST(Bank, MatchesBruteForceAndNeverLosesQuality) {
  Rng rng(13);
  MemoryBank bank;
  std::vector<PseudoLabel> history;
  double prev_mean = -1.0;
  std::array<double, 3> prev{};
  for (int it = 0; it < 300; ++it) {
    std::vector<PseudoLabel> cand;
    const int n = rng.uniform_int(0, 3);
    for (int k = 0; k < n; ++k) cand.push_back(label(std::round(rng.uniform() * 20.0) / 20.0, it, k + 1));
    bank.gate_update(0, cand);
    history.insert(history.end(), cand.begin(), cand.end());
    std::vector<PseudoLabel> oracle = history;
    std::sort(oracle.begin(), oracle.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
      if (a.ensemble != b.ensemble) return a.ensemble > b.ensemble;
      if (a.created_at != b.created_at) return a.created_at > b.created_at;
      return a.aug_id < b.aug_id;
    });
    if (oracle.size() > 3) oracle.resize(3);
    ASSERT_EQ(bank.entries(0).size(), oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_EQ(bank.entries(0)[i].ensemble, oracle[i].ensemble);
      EXPECT_EQ(bank.entries(0)[i].created_at, oracle[i].created_at);
      EXPECT_EQ(bank.entries(0)[i].aug_id, oracle[i].aug_id);
    }
    if (bank.entries(0).size() == 3) {
      EXPECT_GE(bank.mean_score(), prev_mean);
      for (int r = 0; r < 3; ++r) {
        EXPECT_GE(bank.entries(0)[r].ensemble, prev[r]);
        prev[r] = bank.entries(0)[r].ensemble;
      }
      prev_mean = bank.mean_score();
    }
  }
}

TEST(Supervision, UsesTopLabelAndItsBin) {
  MemoryBank bank;
  bank.gate_update(3, {label(0.62, 0), label(0.81, 0)});
  const auto sup = select_supervision(bank, 3);
  ASSERT_TRUE(sup.has_value());
  EXPECT_EQ(sup->label->ensemble, 0.81);
  EXPECT_EQ(sup->bin, 7);
  EXPECT_DOUBLE_EQ(sup->condition, 0.7);
  bank.gate_update(5, {label(0.45, 0)});
  EXPECT_EQ(select_supervision(bank, 5)->bin, 4);
  EXPECT_DOUBLE_EQ(select_supervision(bank, 5)->condition, 0.4);
}

TEST(Generation, IdentityTeacherReturnsInputUnderEveryAugmentation) {
  const ModelParams teacher = identity_teacher();
  const Image input = generate_clean(3, 16, 24);
  const IqaConfig cfg;
  const auto pls = generate_pseudo_labels(teacher, input, cfg, 42);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(pls[k].aug_id, k + 1);
    EXPECT_EQ(pls[k].created_at, 42);
    EXPECT_EQ(pls[k].image, input);
    EXPECT_NEAR(pls[k].ensemble, ensemble_score(input, cfg), 1e-12);
  }
  for (double v : dual_drop_diagnostics(pls, {}).augmentation_variance) EXPECT_NEAR(v, 0.0, 1e-30);
}

TEST(Generation, LabelsLiveInInputFrame) {
  const ModelParams teacher = ModelParams::initialized(Architecture{}, 7);
  const Image input = generate_clean(4, 16, 24);
  const auto pls = generate_pseudo_labels(teacher, input, IqaConfig{}, 0);
  for (const auto& pl : pls) {
    EXPECT_EQ(pl.image.height(), 16);
    EXPECT_EQ(pl.image.width(), 24);
  }
  // the hflip label equals flipping the teacher output on the flipped input back
  const Image manual = apply_transform(restore(teacher, apply_transform(input, Transform::HFlip), 0.7), Transform::HFlip);
  EXPECT_EQ(pls[0].image, manual);
}
