#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "qualiteacher/image.hpp"
#include "qualiteacher/iqa.hpp"
#include "qualiteacher/pseudo_label.hpp"
#include "qualiteacher/restorer.hpp"
#include "qualiteacher/rng.hpp"

namespace qualiteacher {

namespace loss_detail {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline void require_same_shape(const Image& a, const Image& b, const char* who) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": image shapes differ");
}

inline Image pool2(const Image& img) {
  Image out(img.height() / 2, img.width() / 2, img.channels());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = 0.25 * (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) + img.at(2 * y + 1, 2 * x, c) +
                                  img.at(2 * y + 1, 2 * x + 1, c));
  return out;
}

inline Image pool2_adjoint(const Image& g, int h, int w) {
  Image out(h, w, g.channels());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x)
      for (int c = 0; c < g.channels(); ++c) {
        const double v = 0.25 * g.at(y, x, c);
        out.at(2 * y, 2 * x, c) += v;
        out.at(2 * y, 2 * x + 1, c) += v;
        out.at(2 * y + 1, 2 * x, c) += v;
        out.at(2 * y + 1, 2 * x + 1, c) += v;
      }
  return out;
}

}  // namespace loss_detail

// ---------------------------------------------------------------------------
// Pixel-space losses

/// mean(W * |y - target|). Gradient W * sign(y - target) / N, scaled, accumulated into `grad`.
inline double weighted_rec_loss(const Image& y, const Image& target, const WeightMap& wm, Image* grad = nullptr,
                                double scale = 1.0) {
  loss_detail::require_same_shape(y, target, "weighted_rec_loss");
  if (wm.height != y.height() || wm.width != y.width()) throw std::invalid_argument("weighted_rec_loss: weight map shape differs");
  const int c = y.channels();
  const double n = static_cast<double>(y.data().size());
  double acc = 0.0;
  for (std::size_t p = 0; p < y.pixel_count(); ++p)
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      const double d = y.data()[i] - target.data()[i];
      acc += wm.weights[p] * std::abs(d);
      if (grad != nullptr) grad->data()[i] += scale * wm.weights[p] * loss_detail::sign(d) / n;
    }
  return acc / n;
}

inline constexpr int kPerceptualScales = 3;

/// Sum over scales (1, 1/2, 1/4) of mean |horizontal diff| + mean |vertical diff| of (y - target).
/// Gradient fields are linear, so comparing the stacks equals differencing the residual.
inline double perceptual_proxy_loss(const Image& y, const Image& target, Image* grad = nullptr, double scale = 1.0) {
  loss_detail::require_same_shape(y, target, "perceptual_proxy_loss");
  if (y.height() % 4 != 0 || y.width() % 4 != 0) throw std::invalid_argument("perceptual_proxy_loss: dimensions must be divisible by 4");
  std::array<Image, kPerceptualScales> r;
  r[0] = Image(y.height(), y.width(), y.channels());
  for (std::size_t i = 0; i < y.data().size(); ++i) r[0].data()[i] = y.data()[i] - target.data()[i];
  for (int s = 1; s < kPerceptualScales; ++s) r[s] = loss_detail::pool2(r[s - 1]);

  double total = 0.0;
  std::array<Image, kPerceptualScales> g;
  for (int s = 0; s < kPerceptualScales; ++s) {
    const Image& d = r[s];
    const int h = d.height(), w = d.width(), c = d.channels();
    const double nh = static_cast<double>(h * (w - 1) * c), nv = static_cast<double>((h - 1) * w * c);
    g[s] = Image(h, w, c);
    for (int yy = 0; yy < h; ++yy)
      for (int x = 0; x + 1 < w; ++x)
        for (int k = 0; k < c; ++k) {
          const double v = d.at(yy, x + 1, k) - d.at(yy, x, k);
          total += std::abs(v) / nh;
          const double gv = loss_detail::sign(v) / nh;
          g[s].at(yy, x + 1, k) += gv;
          g[s].at(yy, x, k) -= gv;
        }
    for (int yy = 0; yy + 1 < h; ++yy)
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < c; ++k) {
          const double v = d.at(yy + 1, x, k) - d.at(yy, x, k);
          total += std::abs(v) / nv;
          const double gv = loss_detail::sign(v) / nv;
          g[s].at(yy + 1, x, k) += gv;
          g[s].at(yy, x, k) -= gv;
        }
  }
  if (grad != nullptr) {
    Image acc = g[kPerceptualScales - 1];
    for (int s = kPerceptualScales - 2; s >= 0; --s) {
      Image up = loss_detail::pool2_adjoint(acc, r[s].height(), r[s].width());
      for (std::size_t i = 0; i < up.data().size(); ++i) up.data()[i] += g[s].data()[i];
      acc = std::move(up);
    }
    for (std::size_t i = 0; i < acc.data().size(); ++i) grad->data()[i] += scale * acc.data()[i];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Score-space losses

struct PreferenceParams {
  double beta = 5.0;
  double delta = 0.05;
  double s_high = 0.7;
  double s_low = 0.2;
};

inline constexpr double kLogitClamp = 30.0;

/// -log sigmoid(z) with z clamped to [-30, 30]; `dz` receives the derivative (0 where clamped).
inline double neg_log_sigmoid(double z, double* dz = nullptr) {
  const double zc = std::clamp(z, -kLogitClamp, kLogitClamp);
  if (dz != nullptr) *dz = (z < -kLogitClamp || z > kLogitClamp) ? 0.0 : -1.0 / (1.0 + std::exp(zc));
  return zc >= 0.0 ? std::log1p(std::exp(-zc)) : -zc + std::log1p(std::exp(zc));
}

struct PreferenceResult {
  double l1 = 0.0;
  double l2 = 0.0;
  double reg = 0.0;
  bool l2_skipped = false;
  double score_high = 0.0;
  double score_low = 0.0;
  double teacher_floor = 0.0;

  double value() const { return l1 + l2 + reg; }
};

/// Ordering loss between the student's outputs at s_high and s_low, a soft floor at the teacher's
/// poorest banked label, and the injection anchor. `poorest == nullptr` skips the floor term.
/// With `grads` non-null, d(scale * value)/d(params) is accumulated.
inline PreferenceResult preference_loss(const ModelParams& student, const Image& input, const PseudoLabel* poorest,
                                        const PreferenceParams& p, const InjectionSnapshot& snap, const IqaConfig& cfg,
                                        ParamGrads* grads = nullptr, double scale = 1.0) {
  if (snap.empty()) throw std::logic_error("preference_loss: injection snapshot has not been captured");
  if (!(p.s_high > p.s_low)) throw std::invalid_argument("preference_loss: s_high must exceed s_low");
  PreferenceResult r;
  const ForwardTrace th = forward_traced(student, input, p.s_high);
  const ForwardTrace tl = forward_traced(student, input, p.s_low);
  r.score_high = ensemble_score(th.output, cfg);
  r.score_low = ensemble_score(tl.output, cfg);

  double d1 = 0.0;
  r.l1 = neg_log_sigmoid(p.beta * (r.score_high - r.score_low - p.delta), &d1);
  double d2 = 0.0;
  if (poorest != nullptr) {
    r.teacher_floor = poorest->ensemble;  // constant: no gradient reaches the teacher
    r.l2 = neg_log_sigmoid(p.beta * (r.score_high - r.teacher_floor), &d2);
  } else {
    r.l2_skipped = true;
  }
  r.reg = injection_regularizer(student, snap, grads, scale);

  if (grads != nullptr) {
    const double g_high = scale * p.beta * (d1 + d2);
    const double g_low = -scale * p.beta * d1;
    if (g_high != 0.0) {
      Image gy(th.output.height(), th.output.width(), th.output.channels());
      ensemble_score(th.output, cfg, &gy, g_high);
      backward(student, th, gy, *grads);
    }
    if (g_low != 0.0) {
      Image gy(tl.output.height(), tl.output.width(), tl.output.channels());
      ensemble_score(tl.output, cfg, &gy, g_low);
      backward(student, tl, gy, *grads);
    }
  }
  return r;
}

struct CroppedResult {
  double value = 0.0;
  double s1 = 0.0;  // restore, then crop
  double s2 = 0.0;  // crop, then restore
  CropRegion region;
};

using RestoreFn = std::function<Image(const Image&, double)>;

/// |S1 - S2| for an arbitrary restoration map with explicit regions. The training loss uses one
/// region for both orders; distinct regions exist for probing content sensitivity.
inline CroppedResult cropped_consistency(const RestoreFn& f, const Image& input, double s, const CropRegion& region_after,
                                         const CropRegion& region_before, const IqaConfig& cfg) {
  CroppedResult r;
  r.region = region_after;
  r.s1 = ensemble_score(crop(f(input, s), region_after), cfg);
  r.s2 = ensemble_score(f(crop(input, region_before), s), cfg);
  r.value = std::abs(r.s1 - r.s2);
  return r;
}

/// Uniformly placed quarter-size region.
inline CropRegion random_quarter_region(int height, int width, Rng& rng) {
  const int ch = height / 2, cw = width / 2;
  return quarter_region(height, width, rng.uniform_int(0, width - cw), rng.uniform_int(0, height - ch));
}

inline void require_cropped_dims(const Image& input) {
  if (input.height() % 8 != 0 || input.width() % 8 != 0 || input.height() < 16 || input.width() < 16)
    throw std::invalid_argument("cropped_consistency_loss: dimensions must be multiples of 8 and at least 16");
}

/// Order-consistency loss at a given region, gradients through both restoration paths.
inline CroppedResult cropped_consistency_loss(const ModelParams& student, const Image& input, double s, const CropRegion& region,
                                              const IqaConfig& cfg, ParamGrads* grads = nullptr, double scale = 1.0) {
  require_cropped_dims(input);
  CroppedResult r;
  r.region = region;
  const ForwardTrace full = forward_traced(student, input, s);
  const Image after = crop(full.output, region);
  const ForwardTrace part = forward_traced(student, crop(input, region), s);
  r.s1 = ensemble_score(after, cfg);
  r.s2 = ensemble_score(part.output, cfg);
  r.value = std::abs(r.s1 - r.s2);
  const double sg = loss_detail::sign(r.s1 - r.s2) * scale;
  if (grads != nullptr && sg != 0.0) {
    Image g_after(after.height(), after.width(), after.channels());
    ensemble_score(after, cfg, &g_after, sg);
    Image g_full(full.output.height(), full.output.width(), full.output.channels());
    paste(g_full, g_after, region);
    backward(student, full, g_full, *grads);
    Image g_part(part.output.height(), part.output.width(), part.output.channels());
    ensemble_score(part.output, cfg, &g_part, -sg);
    backward(student, part, g_part, *grads);
  }
  return r;
}

/// Draws one quarter-size region and uses it for both orders.
inline CroppedResult cropped_consistency_loss(const ModelParams& student, const Image& input, double s, Rng& rng,
                                              const IqaConfig& cfg, ParamGrads* grads = nullptr, double scale = 1.0) {
  require_cropped_dims(input);
  const CropRegion region = random_quarter_region(input.height(), input.width(), rng);
  return cropped_consistency_loss(student, input, s, region, cfg, grads, scale);
}

// ---------------------------------------------------------------------------
// Total

struct LossCoefficients {
  double rec = 1.0;
  double per = 1.0;
  double pref = 1.0;
  double cropped = 1.0;
};

struct LossBreakdown {
  double rec = 0.0;
  double per = 0.0;
  double pref_l1 = 0.0;
  double pref_l2 = 0.0;
  double pref_reg = 0.0;
  double cropped = 0.0;
  double total = 0.0;
  bool pref_l2_skipped = false;
  double score_high = 0.0;
  double score_low = 0.0;
};

inline double total_loss(const LossBreakdown& b, const LossCoefficients& w = {}) {
  return w.rec * b.rec + w.per * b.per + w.pref * (b.pref_l1 + b.pref_l2 + b.pref_reg) + w.cropped * b.cropped;
}

}  // namespace qualiteacher
