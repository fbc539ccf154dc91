#include <gtest/gtest.h>

#include <cmath>

#include "qualiteacher/gradcheck.hpp"
#include "qualiteacher/restorer.hpp"
#include "qualiteacher/synthbench.hpp"

using namespace qualiteacher;

namespace {

ModelParams model(std::uint64_t seed = 1) { return ModelParams::initialized(Architecture{}, seed); }

}  // namespace

TEST(Params, LayoutAndCount) {
  const Architecture arch;
  const ModelParams p(arch);
  ASSERT_EQ(p.tensors().size(), static_cast<std::size_t>(kParamCount));
  const int b2 = 2 * arch.freq_bands, h = arch.embed_hidden;
  const std::size_t convs = 8 * 1 * 9 + 8 + 16 * 8 * 9 + 16 + 32 * 16 * 9 + 32 + 16 * 32 * 9 + 16 + 8 * 16 * 9 + 8 + 2 * 8 * 9 + 2;
  const std::size_t embed = static_cast<std::size_t>(h * b2 + h + 32 * h + 32 + 32 * 32);
  EXPECT_EQ(p.parameter_count(), convs + embed);
  EXPECT_EQ(p[kInjectW].name, "inject.weight");
  EXPECT_EQ(p[kInjectW].dims, (std::vector<int>{32, 32}));
}

TEST(Params, InitializationIsSeededAndFanInBounded) {
  const ModelParams a = model(5), b = model(5), c = model(6);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  for (const auto& t : a.tensors()) {
    if (t.dims.size() < 2) {
      for (double v : t.values) EXPECT_EQ(v, 0.0) << t.name;
      continue;
    }
    int fan_in = 1;
    for (std::size_t d = 1; d < t.dims.size(); ++d) fan_in *= t.dims[d];
    for (double v : t.values) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(fan_in)) << t.name;
  }
}

TEST(Params, DigestTracksArchitecture) {
  Architecture a, b;
  b.freq_bands = a.freq_bands + 1;
  EXPECT_EQ(a.digest(), Architecture{}.digest());
  EXPECT_NE(a.digest(), b.digest());
}

TEST(Encoding, KnownValues) {
  const auto g = frequency_encode(0.5, 2);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_NEAR(g[0], 1.0, 1e-15);
  EXPECT_NEAR(g[1], 0.0, 1e-15);
  EXPECT_NEAR(g[2], 0.0, 1e-15);
  EXPECT_NEAR(g[3], -1.0, 1e-15);
  const auto z = frequency_encode(0.0, 3);
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(z[2 * l], 0.0);
    EXPECT_EQ(z[2 * l + 1], 1.0);
  }
}

TEST(Encoding, RejectsOutOfRangeScores) {
  EXPECT_THROW(frequency_encode(-0.01, 6), std::invalid_argument);
  EXPECT_THROW(frequency_encode(1.01, 6), std::invalid_argument);
  EXPECT_THROW(frequency_encode(std::nan(""), 6), std::invalid_argument);
  EXPECT_THROW(frequency_encode(0.5, 0), std::invalid_argument);
}

TEST(Injection, AddsSpatiallyConstantShift) {
  Rng rng(3);
  Tensor f(4, 2, 3);
  for (auto& v : f.v) v = rng.uniform();
  std::vector<double> e(4), w(16);
  for (auto& v : e) v = rng.uniform(-1, 1);
  for (auto& v : w) v = rng.uniform(-1, 1);
  const Tensor out = inject(f, e, w);
  for (int c = 0; c < 4; ++c) {
    double shift = 0.0;
    for (int k = 0; k < 4; ++k) shift += w[c * 4 + k] * e[k];
    for (std::size_t i = 0; i < f.plane_size(); ++i) EXPECT_NEAR(out.plane(c)[i] - f.plane(c)[i], shift, 1e-14);
  }
}

TEST(Injection, ChannelMismatchThrows) {
  const Tensor f(4, 2, 2);
  EXPECT_THROW(inject(f, std::vector<double>(3), std::vector<double>(16)), std::invalid_argument);
  EXPECT_THROW(inject(f, std::vector<double>(4), std::vector<double>(12)), std::invalid_argument);
}

TEST(Restorer, ZeroHeadIsExactIdentity) {
  ModelParams p = model();
  std::fill(p.values(kHeadW).begin(), p.values(kHeadW).end(), 0.0);
  std::fill(p.values(kHeadB).begin(), p.values(kHeadB).end(), 0.0);
  const Image img = generate_clean(4);
  for (double s : {0.0, 0.3, 1.0}) EXPECT_EQ(restore(p, img, s), img);
}

TEST(Restorer, OutputStaysInUnitRange) {
  ModelParams p = model(2);
  for (auto& t : p.tensors())
    for (auto& v : t.values) v *= 8.0;
  Rng rng(7);
  for (int i = 0; i < 5; ++i) {
    Image img(16, 24, 1);
    for (auto& v : img.data()) v = rng.uniform();
    const Image out = restore(p, img, rng.uniform());
    for (double v : out.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Restorer, ScoreActsOnlyThroughInjection) {
  ModelParams p = model(3);
  const Image img = generate_clean(5);
  EXPECT_NE(restore(p, img, 0.2), restore(p, img, 0.7));
  std::fill(p.values(kInjectW).begin(), p.values(kInjectW).end(), 0.0);
  EXPECT_EQ(restore(p, img, 0.2), restore(p, img, 0.7));
}

TEST(Restorer, DeterministicForwardAndShapePreserved) {
  const ModelParams p = model();
  const Image img = generate_clean(8, 16, 20);
  const Image a = restore(p, img, 0.4);
  EXPECT_EQ(a, restore(p, img, 0.4));
  EXPECT_EQ(a.height(), 16);
  EXPECT_EQ(a.width(), 20);
}

TEST(Restorer, InputValidation) {
  const ModelParams p = model();
  EXPECT_THROW(restore(p, Image(18, 24, 1), 0.5), std::invalid_argument);
  EXPECT_THROW(restore(p, Image(24, 24, 3), 0.5), std::invalid_argument);
  EXPECT_THROW(restore(p, Image(24, 24, 1), 1.5), std::invalid_argument);
  EXPECT_THROW(restore(ModelParams{}, Image(24, 24, 1), 0.5), std::logic_error);
}

TEST(Restorer, ColorModelRunsPerChannel) {
  Architecture arch;
  arch.in_channels = 3;
  const ModelParams p = ModelParams::initialized(arch, 1);
  const Image out = restore(p, generate_clean(1, 16, 16, 3), 0.5);
  EXPECT_EQ(out.channels(), 3);
}

TEST(Restorer, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3})
    for (const auto& r : gradcheck_restorer(seed, 10)) EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst;
}

TEST(Restorer, BackwardIsLinearInUpstreamGradient) {
  const ModelParams p = model(4);
  const Image img = generate_clean(6);
  const ForwardTrace t = forward_traced(p, img, 0.6);
  Rng rng(2);
  Image g(24, 24, 1);
  for (auto& v : g.data()) v = rng.uniform(-1, 1);
  Image g3 = g;
  for (auto& v : g3.data()) v *= 3.0;
  ParamGrads a = p.zero_grads(), b = p.zero_grads();
  const Image ia = backward(p, t, g, a);
  const Image ib = backward(p, t, g3, b);
  for (std::size_t i = 0; i < ia.size(); ++i) EXPECT_NEAR(ib.data()[i], 3.0 * ia.data()[i], 1e-12);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) EXPECT_NEAR(b[k][i], 3.0 * a[k][i], 1e-10 + 1e-10 * std::abs(a[k][i]));
}

TEST(Restorer, BackwardWithoutTraceThrows) {
  const ModelParams p = model();
  ParamGrads g = p.zero_grads();
  EXPECT_THROW(backward(p, ForwardTrace{}, Image(24, 24, 1), g), std::logic_error);
  ConditionedRestorer net(p);
  EXPECT_THROW(net.backward(Image(24, 24, 1)), std::logic_error);
}

TEST(Restorer, WrapperMatchesFreeFunctions) {
  const ModelParams p = model(9);
  const Image img = generate_clean(2);
  ConditionedRestorer net(p);
  const Image y = net.forward(img, 0.35);
  EXPECT_EQ(y, restore(p, img, 0.35));
  Image ones(24, 24, 1, 1.0);
  const auto r = net.backward(ones);
  ParamGrads g = p.zero_grads();
  const Image gin = backward(p, forward_traced(p, img, 0.35), ones, g);
  EXPECT_EQ(r.input, gin);
  EXPECT_EQ(r.params, g);
  EXPECT_EQ(net.snapshot_injection_weights(), snapshot_injection_weights(p));
}

TEST(Regularizer, HalfSquaredFrobeniusDistance) {
  ModelParams p = model(10);
  const InjectionSnapshot snap = snapshot_injection_weights(p);
  EXPECT_EQ(injection_regularizer(p, snap), 0.0);
  double oracle = 0.0;
  for (std::size_t i = 0; i < p.values(kInjectW).size(); ++i) {
    const double d = 0.01 * static_cast<double>(i % 7) - 0.03;
    p.values(kInjectW)[i] += d;
    oracle += 0.5 * d * d;
  }
  ParamGrads g = p.zero_grads();
  EXPECT_NEAR(injection_regularizer(p, snap, &g, 2.0), oracle, 1e-14);
  for (std::size_t i = 0; i < g[kInjectW].size(); ++i)
    EXPECT_NEAR(g[kInjectW][i], 2.0 * (p.values(kInjectW)[i] - snap.weights()[0][i]), 1e-15);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (k != kInjectW)
      for (double v : g[k]) EXPECT_EQ(v, 0.0);
}

TEST(Regularizer, MissingSnapshotIsAnError) {
  EXPECT_THROW(injection_regularizer(model(), InjectionSnapshot{}), std::logic_error);
}

TEST(Regularizer, SnapshotIsIndependentOfLaterUpdates) {
  ModelParams p = model(11);
  const InjectionSnapshot snap = snapshot_injection_weights(p);
  const auto before = snap.weights();
  p.values(kInjectW)[0] += 1.0;
  EXPECT_EQ(snap.weights(), before);
}
