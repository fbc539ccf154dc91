#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qualiteacher/iqa.hpp"
#include "qualiteacher/losses.hpp"
#include "qualiteacher/restorer.hpp"
#include "qualiteacher/rng.hpp"
#include "qualiteacher/synthbench.hpp"

namespace qualiteacher {

inline constexpr double kFdStep = 1e-4;
inline constexpr double kFdTolerance = 1e-4;

/// |analytic - numeric| / (max(|analytic|, |numeric|) + 1e-8)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + 1e-8);
}

/// Central difference of f along one scalar slot, restoring the slot afterwards.
inline double central_difference(const std::function<double()>& f, double& slot, double step = kFdStep) {
  const double saved = slot;
  slot = saved + step;
  const double up = f();
  slot = saved - step;
  const double down = f();
  slot = saved;
  return (up - down) / (2.0 * step);
}

/// Fourth-order stencil, for functions whose third derivative swamps the central estimate.
inline double five_point_difference(const std::function<double()>& f, double& slot, double step = kFdStep) {
  const double saved = slot;
  double v[4];
  const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
  for (int k = 0; k < 4; ++k) {
    slot = saved + offsets[k] * step;
    v[k] = f();
  }
  slot = saved;
  return (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * step);
}

struct GradCheckResult {
  std::string name;
  int checks = 0;
  double worst = 0.0;
  bool passed = true;
};

namespace gradcheck_detail {

struct Probe {
  GradCheckResult r;
  void add(double analytic, double numeric) {
    ++r.checks;
    const double e = relative_error(analytic, numeric);
    r.worst = std::max(r.worst, e);
    if (!(e < kFdTolerance)) r.passed = false;
  }
};

inline Image test_image(std::uint64_t seed, int channels = 1, int size = 24) {
  DegradationSpec d;
  d.noise_sigma = 0.05;
  d.blur_radius = 1;
  d.veil_strength = 0.1;
  d.gamma = 1.2;
  d.seed = seed;
  return degrade(generate_clean(seed, size, size, channels), d);
}

/// Pixel-gradient check for a scalar function of an image with an accumulating gradient.
inline GradCheckResult check_pixels(const std::string& name, Image img, int coords, Rng& rng,
                                    const std::function<double(const Image&, Image*)>& f) {
  Probe p{{name}};
  Image grad(img.height(), img.width(), img.channels());
  f(img, &grad);
  for (int k = 0; k < coords; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(img.data().size()) - 1));
    const double num = central_difference([&] { return f(img, nullptr); }, img.data()[i]);
    p.add(grad.data()[i], num);
  }
  return p.r;
}

/// Parameter-gradient check for a scalar function of the model with accumulating ParamGrads.
inline GradCheckResult check_params(const std::string& name, ModelParams params, int coords, Rng& rng,
                                    const std::function<double(const ModelParams&, ParamGrads*)>& f,
                                    const std::vector<std::size_t>& tensors = {}) {
  Probe p{{name}};
  ParamGrads g = params.zero_grads();
  f(params, &g);
  std::vector<std::size_t> pick = tensors;
  if (pick.empty())
    for (std::size_t t = 0; t < kParamCount; ++t) pick.push_back(t);
  for (int k = 0; k < coords; ++k) {
    const std::size_t t = pick[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pick.size()) - 1))];
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(params.values(t).size()) - 1));
    const double num = central_difference([&] { return f(params, nullptr); }, params.values(t)[i]);
    p.add(g[t][i], num);
  }
  return p.r;
}

}  // namespace gradcheck_detail

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> m = {"iqa", "restorer", "losses"};
  return m;
}

inline std::vector<GradCheckResult> gradcheck_iqa(std::uint64_t seed, int coords = 10) {
  using namespace gradcheck_detail;
  Rng rng(derive_seed(seed, 0x1A));
  const IqaConfig cfg;
  std::vector<GradCheckResult> out;
  const Image gray = test_image(seed);
  const Image color = test_image(seed + 1, 3);
  out.push_back(check_pixels("iqa.sharpness", gray, coords, rng,
                             [&](const Image& x, Image* g) { return score_sharpness(x, cfg, g); }));
  out.push_back(check_pixels("iqa.distortion", gray, coords, rng,
                             [&](const Image& x, Image* g) { return score_distortion(x, cfg, g); }));
  out.push_back(check_pixels("iqa.structure", gray, coords, rng,
                             [&](const Image& x, Image* g) { return score_structure(x, cfg, g); }));
  out.push_back(check_pixels("iqa.structure.rgb", color, coords, rng,
                             [&](const Image& x, Image* g) { return score_structure(x, cfg, g); }));
  out.push_back(check_pixels("iqa.ensemble", gray, coords, rng,
                             [&](const Image& x, Image* g) { return ensemble_score(x, cfg, g); }));
  return out;
}

inline std::vector<GradCheckResult> gradcheck_restorer(std::uint64_t seed, int coords = 10) {
  using namespace gradcheck_detail;
  Rng rng(derive_seed(seed, 0x2B));
  const ModelParams params = ModelParams::initialized(Architecture{}, seed);
  const Image img = test_image(seed);
  Image proj(img.height(), img.width(), img.channels());
  for (auto& v : proj.data()) v = rng.uniform(-1.0, 1.0);
  const double s = 0.7;
  auto projected = [&](const ModelParams& q, const Image& x, ParamGrads* g, Image* gx) {
    const ForwardTrace t = forward_traced(q, x, s);
    double acc = 0.0;
    for (std::size_t i = 0; i < proj.data().size(); ++i) acc += proj.data()[i] * t.output.data()[i];
    if (g != nullptr || gx != nullptr) {
      ParamGrads local = q.zero_grads();
      const Image gin = backward(q, t, proj, g != nullptr ? *g : local);
      if (gx != nullptr)
        for (std::size_t i = 0; i < gin.data().size(); ++i) gx->data()[i] += gin.data()[i];
    }
    return acc;
  };
  std::vector<GradCheckResult> out;
  out.push_back(check_params("restorer.params", params, 2 * coords, rng,
                             [&](const ModelParams& q, ParamGrads* g) { return projected(q, img, g, nullptr); }));
  out.push_back(check_pixels("restorer.input", img, coords, rng,
                             [&](const Image& x, Image* gx) { return projected(params, x, nullptr, gx); }));

  // d e_S / d s, projected on a random direction
  {
    Probe p{{"restorer.embedding"}};
    std::vector<double> dir(Architecture::bottleneck());
    for (auto& v : dir) v = rng.uniform(-1.0, 1.0);
    auto proj_e = [&](double sv) {
      const auto e = embed_score(params, sv);
      double acc = 0.0;
      for (std::size_t i = 0; i < e.size(); ++i) acc += dir[i] * e[i];
      return acc;
    };
    for (int k = 0; k < coords; ++k) {
      double sv = rng.uniform(0.05, 0.95);
      const auto de = embed_score_deriv(params, sv);
      double analytic = 0.0;
      for (std::size_t i = 0; i < de.size(); ++i) analytic += dir[i] * de[i];
      p.add(analytic, five_point_difference([&] { return proj_e(sv); }, sv));
    }
    out.push_back(p.r);
  }
  return out;
}

inline std::vector<GradCheckResult> gradcheck_losses(std::uint64_t seed, int coords = 10) {
  using namespace gradcheck_detail;
  Rng rng(derive_seed(seed, 0x3C));
  const IqaConfig cfg;
  const Image y = test_image(seed);
  const Image target = test_image(seed + 7);
  std::vector<GradCheckResult> out;

  const WeightMap wm = blockwise_weight_map(target, cfg);
  out.push_back(check_pixels("losses.rec", y, coords, rng,
                             [&](const Image& x, Image* g) { return weighted_rec_loss(x, target, wm, g); }));
  out.push_back(check_pixels("losses.perceptual", y, coords, rng,
                             [&](const Image& x, Image* g) { return perceptual_proxy_loss(x, target, g); }));

  ModelParams params = ModelParams::initialized(Architecture{}, seed + 3);
  InjectionSnapshot snap = snapshot_injection_weights(params);
  for (auto& v : params.values(kInjectW)) v += rng.uniform(-0.05, 0.05);
  PseudoLabel floor_label;
  floor_label.ensemble = 0.55;
  const PreferenceParams pp;
  out.push_back(check_params("losses.preference", params, coords, rng, [&](const ModelParams& q, ParamGrads* g) {
    return preference_loss(q, y, &floor_label, pp, snap, cfg, g).value();
  }));
  out.push_back(check_params("losses.preference.reg", params, coords, rng,
                             [&](const ModelParams& q, ParamGrads* g) { return injection_regularizer(q, snap, g); },
                             {kInjectW}));
  const CropRegion region = quarter_region(y.height(), y.width(), 5, 9);
  out.push_back(check_params("losses.cropped", params, coords, rng, [&](const ModelParams& q, ParamGrads* g) {
    return cropped_consistency_loss(q, y, 0.7, region, cfg, g).value;
  }));
  return out;
}

/// Runs the suites for one module ("iqa", "restorer", "losses") or all of them when `module` is empty.
inline std::vector<GradCheckResult> run_gradchecks(const std::string& module = "", std::uint64_t seed = 20240607, int coords = 10) {
  if (!module.empty() && std::find(gradcheck_modules().begin(), gradcheck_modules().end(), module) == gradcheck_modules().end())
    throw std::invalid_argument("unknown gradcheck module '" + module + "' (expected iqa, restorer or losses)");
  std::vector<GradCheckResult> out;
  auto append = [&](std::vector<GradCheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  if (module.empty() || module == "iqa") append(gradcheck_iqa(seed, coords));
  if (module.empty() || module == "restorer") append(gradcheck_restorer(seed, coords));
  if (module.empty() || module == "losses") append(gradcheck_losses(seed, coords));
  return out;
}

}  // namespace qualiteacher
