#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "qualiteacher/image.hpp"

namespace qualiteacher {

/// Scorer roles. A rewards sharpness (higher is better), B measures
/// distortion (higher is worse), C rewards global structure and exposure.
enum class Metric { A_sharpness, B_distortion, C_structure };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::A_sharpness: return "A_sharpness";
    case Metric::B_distortion: return "B_distortion";
    case Metric::C_structure: return "C_structure";
  }
  return "?";
}

struct RawScore {
  double value = 0.0;
  Metric metric = Metric::A_sharpness;
};

struct NormBounds {
  double lo = 0.0;
  double hi = 100.0;
};

/// Gains, reference constants and normalization bounds for the scorers.
/// The MSCN moment references are the means over the 256-image clean
/// synthetic calibration corpus (seeds 0..255, 24x24); see
/// calibrate_distortion_reference().
struct IqaConfig {
  // role A: 100 * sat(lap_gain * mean Laplacian energy + range_gain * global deviation)
  double sharp_lap_gain = 200.0;
  double sharp_range_gain = 20.0;
  // role B
  double mscn_eps = 1e-3;
  double dist_m2_ref = 0.2274696786;
  double dist_m4_ref = 0.1348381538;
  double dist_m4_weight = 0.5;
  double dist_gain = 2.7;
  // role C
  double struct_contrast_gain = 200.0;
  double struct_w_contrast = 0.5;
  double struct_w_exposure = 0.3;
  double struct_w_balance = 0.2;
  double struct_balance_gain = 50.0;

  NormBounds bounds_a{};
  NormBounds bounds_b{};
  NormBounds bounds_c{};
};

inline constexpr std::array<double, 3> kEnsembleWeights = {0.4, 0.4, 0.2};
inline constexpr int kMinScorerSize = 8;
inline constexpr int kMscnRadius = 3;  // 7x7 window

/// Smooth saturating map [0, inf) -> [0, 1).
inline double saturate(double x) { return x / (1.0 + x); }
inline double saturate_deriv(double x) { return 1.0 / ((1.0 + x) * (1.0 + x)); }

namespace iqa_detail {

inline void require_min_size(const Image& img, int min_size, const char* who) {
  if (img.height() < min_size || img.width() < min_size) {
    throw std::invalid_argument(std::string(who) + ": image must be at least " + std::to_string(min_size) + "x" +
                                std::to_string(min_size) + ", got " + std::to_string(img.height()) + "x" +
                                std::to_string(img.width()));
  }
}

/// Channel-mean luminance as a dense H*W vector.
inline std::vector<double> luminance(const Image& img) {
  const int c = img.channels();
  std::vector<double> y(img.pixel_count());
  const auto& d = img.data();
  for (std::size_t p = 0; p < y.size(); ++p) {
    double acc = 0.0;
    for (int k = 0; k < c; ++k) acc += d[p * c + k];
    y[p] = acc / c;
  }
  return y;
}

/// Spreads a luminance gradient back onto the channels and accumulates into `grad`.
inline void scatter_luminance_grad(const std::vector<double>& gy, Image& grad, double scale) {
  const int c = grad.channels();
  auto& d = grad.data();
  const double share = scale / c;
  for (std::size_t p = 0; p < gy.size(); ++p)
    for (int k = 0; k < c; ++k) d[p * c + k] += gy[p] * share;
}

inline std::array<double, 2 * kMscnRadius + 1> gaussian_taps() {
  std::array<double, 2 * kMscnRadius + 1> t{};
  const double sigma = 7.0 / 6.0;
  double sum = 0.0;
  for (int i = -kMscnRadius; i <= kMscnRadius; ++i) {
    t[i + kMscnRadius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += t[i + kMscnRadius];
  }
  for (auto& v : t) v /= sum;
  return t;
}

// Valid-region separable Gaussian filter: input HxW, output (H-6)x(W-6).
inline std::vector<double> gauss_valid(const std::vector<double>& in, int h, int w) {
  static const auto taps = gaussian_taps();
  const int r = kMscnRadius, oh = h - 2 * r, ow = w - 2 * r;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k <= 2 * r; ++k) acc += taps[k] * in[y * w + x + k];
      tmp[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k <= 2 * r; ++k) acc += taps[k] * tmp[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

// Adjoint of gauss_valid: spreads an (H-6)x(W-6) gradient back to HxW.
inline std::vector<double> gauss_valid_adjoint(const std::vector<double>& g, int h, int w) {
  static const auto taps = gaussian_taps();
  const int r = kMscnRadius, oh = h - 2 * r, ow = w - 2 * r;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k <= 2 * r; ++k) tmp[(y + k) * ow + x] += taps[k] * g[y * ow + x];
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k <= 2 * r; ++k) out[y * w + x + k] += taps[k] * tmp[y * ow + x];
  return out;
}

}  // namespace iqa_detail

// ---------------------------------------------------------------------------
// Role A: sharpness

/// 100 * sat(k1 * mean squared Laplacian + k2 * global deviation). When `grad`
/// is non-null the pixel gradient is accumulated into it (scaled by `grad_scale`).
inline double score_sharpness(const Image& img, const IqaConfig& cfg, Image* grad = nullptr, double grad_scale = 1.0) {
  iqa_detail::require_min_size(img, kMinScorerSize, "score_sharpness");
  const int h = img.height(), w = img.width();
  const auto y = iqa_detail::luminance(img);
  const double n_int = static_cast<double>((h - 2) * (w - 2));
  const double n = static_cast<double>(h * w);

  double energy = 0.0;
  for (int i = 1; i < h - 1; ++i)
    for (int j = 1; j < w - 1; ++j) {
      const double lap = y[(i - 1) * w + j] + y[(i + 1) * w + j] + y[i * w + j - 1] + y[i * w + j + 1] - 4.0 * y[i * w + j];
      energy += lap * lap;
    }
  energy /= n_int;

  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= n;
  constexpr double kRangeEps = 1e-6;
  const double dev = std::sqrt(var + kRangeEps) - std::sqrt(kRangeEps);

  const double x = cfg.sharp_lap_gain * energy + cfg.sharp_range_gain * dev;
  const double score = 100.0 * saturate(x);

  if (grad != nullptr) {
    const double dx = 100.0 * saturate_deriv(x);
    std::vector<double> gy(y.size(), 0.0);
    const double ge = dx * cfg.sharp_lap_gain * 2.0 / n_int;
    for (int i = 1; i < h - 1; ++i)
      for (int j = 1; j < w - 1; ++j) {
        const double lap = y[(i - 1) * w + j] + y[(i + 1) * w + j] + y[i * w + j - 1] + y[i * w + j + 1] - 4.0 * y[i * w + j];
        const double g = ge * lap;
        gy[(i - 1) * w + j] += g;
        gy[(i + 1) * w + j] += g;
        gy[i * w + j - 1] += g;
        gy[i * w + j + 1] += g;
        gy[i * w + j] -= 4.0 * g;
      }
    const double gd = dx * cfg.sharp_range_gain / (2.0 * std::sqrt(var + kRangeEps)) * 2.0 / n;
    for (std::size_t p = 0; p < y.size(); ++p) gy[p] += gd * (y[p] - mean);
    iqa_detail::scatter_luminance_grad(gy, *grad, grad_scale);
  }
  return score;
}

// ---------------------------------------------------------------------------
// Role B: MSCN moment deviation

struct MscnMoments {
  double m2 = 0.0;
  double m4 = 0.0;
};

namespace iqa_detail {

inline constexpr double kVarFloor = 1e-10;
inline constexpr double kMomentFloor = 1e-4;

struct MscnField {
  int oh = 0, ow = 0;
  std::vector<double> mu, nu, sigma, mscn;
};

inline MscnField mscn_field(const std::vector<double>& y, int h, int w, double eps) {
  MscnField f;
  f.oh = h - 2 * kMscnRadius;
  f.ow = w - 2 * kMscnRadius;
  std::vector<double> y2(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y2[i] = y[i] * y[i];
  f.mu = gauss_valid(y, h, w);
  f.nu = gauss_valid(y2, h, w);
  const std::size_t n = f.mu.size();
  f.sigma.resize(n);
  f.mscn.resize(n);
  for (int i = 0; i < f.oh; ++i)
    for (int j = 0; j < f.ow; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * f.ow + j;
      const double v = f.nu[p] - f.mu[p] * f.mu[p];
      f.sigma[p] = std::sqrt(v + kVarFloor);
      const double center = y[(i + kMscnRadius) * w + j + kMscnRadius];
      f.mscn[p] = (center - f.mu[p]) / (f.sigma[p] + eps);
    }
  return f;
}

}  // namespace iqa_detail

/// Second and fourth moments of the MSCN coefficients over the window-valid interior.
inline MscnMoments mscn_moments(const Image& img, double eps = 1e-3) {
  iqa_detail::require_min_size(img, kMinScorerSize, "mscn_moments");
  const auto y = iqa_detail::luminance(img);
  const auto f = iqa_detail::mscn_field(y, img.height(), img.width(), eps);
  MscnMoments m;
  for (double v : f.mscn) {
    const double v2 = v * v;
    m.m2 += v2;
    m.m4 += v2 * v2;
  }
  m.m2 /= static_cast<double>(f.mscn.size());
  m.m4 /= static_cast<double>(f.mscn.size());
  return m;
}

/// 100 * sat(gain * [log^2(m2/m2_ref) + w4 * log^2(m4/m4_ref)]); higher means more distorted.
inline double score_distortion(const Image& img, const IqaConfig& cfg, Image* grad = nullptr, double grad_scale = 1.0) {
  using namespace iqa_detail;
  require_min_size(img, kMinScorerSize, "score_distortion");
  const int h = img.height(), w = img.width();
  const auto y = luminance(img);
  const auto f = mscn_field(y, h, w, cfg.mscn_eps);
  const double n = static_cast<double>(f.mscn.size());

  double m2 = 0.0, m4 = 0.0;
  for (double v : f.mscn) {
    m2 += v * v;
    m4 += v * v * v * v;
  }
  m2 /= n;
  m4 /= n;
  const double l2 = std::log((m2 + kMomentFloor) / (cfg.dist_m2_ref + kMomentFloor));
  const double l4 = std::log((m4 + kMomentFloor) / (cfg.dist_m4_ref + kMomentFloor));
  const double dev = l2 * l2 + cfg.dist_m4_weight * l4 * l4;
  const double x = cfg.dist_gain * dev;
  const double score = 100.0 * saturate(x);

  if (grad != nullptr) {
    const double dx = 100.0 * saturate_deriv(x) * cfg.dist_gain;
    const double dm2 = dx * 2.0 * l2 / (m2 + kMomentFloor);
    const double dm4 = dx * cfg.dist_m4_weight * 2.0 * l4 / (m4 + kMomentFloor);
    const std::size_t np = f.mscn.size();
    std::vector<double> g_mu(np), g_nu(np);
    std::vector<double> gy(y.size(), 0.0);
    for (int i = 0; i < f.oh; ++i)
      for (int j = 0; j < f.ow; ++j) {
        const std::size_t p = static_cast<std::size_t>(i) * f.ow + j;
        const double m = f.mscn[p];
        const double g_m = (dm2 * 2.0 * m + dm4 * 4.0 * m * m * m) / n;
        const double den = f.sigma[p] + cfg.mscn_eps;
        const double center = y[(i + kMscnRadius) * w + j + kMscnRadius];
        const double num = center - f.mu[p];
        // M = num / den, den = sqrt(nu - mu^2 + floor) + eps
        const double d_sigma = -num / (den * den);
        const double d_v = d_sigma / (2.0 * f.sigma[p]);
        gy[(i + kMscnRadius) * w + j + kMscnRadius] += g_m / den;
        g_mu[p] = g_m * (-1.0 / den + d_v * (-2.0 * f.mu[p]));
        g_nu[p] = g_m * d_v;
      }
    const auto from_mu = gauss_valid_adjoint(g_mu, h, w);
    const auto from_nu = gauss_valid_adjoint(g_nu, h, w);
    for (std::size_t q = 0; q < y.size(); ++q) gy[q] += from_mu[q] + 2.0 * y[q] * from_nu[q];
    scatter_luminance_grad(gy, *grad, grad_scale);
  }
  return score;
}

// ---------------------------------------------------------------------------
// Role C: global structure on an 8x downsampled view

struct StructureTerms {
  double contrast = 0.0;
  double exposure = 0.0;
  double balance = 0.0;
};

namespace iqa_detail {

struct DownView {
  int vh = 0, vw = 0, bh = 0, bw = 0;
  std::vector<double> v;  // vh*vw*C, interleaved like Image
};

inline DownView downsample8(const Image& img) {
  DownView d;
  d.vh = std::max(1, img.height() / 8);
  d.vw = std::max(1, img.width() / 8);
  d.bh = img.height() / d.vh;
  d.bw = img.width() / d.vw;
  const int c = img.channels();
  d.v.assign(static_cast<std::size_t>(d.vh) * d.vw * c, 0.0);
  const double inv = 1.0 / (d.bh * d.bw);
  for (int p = 0; p < d.vh; ++p)
    for (int q = 0; q < d.vw; ++q)
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (int y = p * d.bh; y < (p + 1) * d.bh; ++y)
          for (int x = q * d.bw; x < (q + 1) * d.bw; ++x) acc += img.at(y, x, k);
        d.v[(static_cast<std::size_t>(p) * d.vw + q) * c + k] = acc * inv;
      }
  return d;
}

}  // namespace iqa_detail

inline double score_structure(const Image& img, const IqaConfig& cfg, Image* grad = nullptr, double grad_scale = 1.0,
                              StructureTerms* terms = nullptr) {
  using namespace iqa_detail;
  require_min_size(img, kMinScorerSize, "score_structure");
  const int c = img.channels();
  const auto view = downsample8(img);
  const int nv = view.vh * view.vw;

  std::vector<double> lum(nv);
  for (int p = 0; p < nv; ++p) {
    double acc = 0.0;
    for (int k = 0; k < c; ++k) acc += view.v[static_cast<std::size_t>(p) * c + k];
    lum[p] = acc / c;
  }
  double mean = 0.0;
  for (double v : lum) mean += v;
  mean /= nv;
  double var = 0.0;
  for (double v : lum) var += (v - mean) * (v - mean);
  var /= nv;

  const double t_contrast = saturate(cfg.struct_contrast_gain * var);
  const double t_exposure = 1.0 - 4.0 * (mean - 0.5) * (mean - 0.5);

  std::array<double, 3> ch_mean{0.0, 0.0, 0.0};
  double ch_avg = 0.0, ch_var = 0.0, t_balance = 1.0;
  if (c == 3) {
    for (int p = 0; p < nv; ++p)
      for (int k = 0; k < 3; ++k) ch_mean[k] += view.v[static_cast<std::size_t>(p) * 3 + k] / nv;
    ch_avg = (ch_mean[0] + ch_mean[1] + ch_mean[2]) / 3.0;
    for (int k = 0; k < 3; ++k) ch_var += (ch_mean[k] - ch_avg) * (ch_mean[k] - ch_avg) / 3.0;
    t_balance = 1.0 / (1.0 + cfg.struct_balance_gain * ch_var);
  }
  if (terms != nullptr) *terms = {t_contrast, t_exposure, t_balance};

  const double score =
      100.0 * (cfg.struct_w_contrast * t_contrast + cfg.struct_w_exposure * t_exposure + cfg.struct_w_balance * t_balance);

  if (grad != nullptr) {
    // gradient on the view, then spread uniformly over each averaging block
    std::vector<double> gv(view.v.size(), 0.0);
    const double g_var = 100.0 * cfg.struct_w_contrast * saturate_deriv(cfg.struct_contrast_gain * var) * cfg.struct_contrast_gain;
    const double g_mean = 100.0 * cfg.struct_w_exposure * (-8.0 * (mean - 0.5));
    for (int p = 0; p < nv; ++p) {
      const double g_lum = g_var * 2.0 * (lum[p] - mean) / nv + g_mean / nv;
      for (int k = 0; k < c; ++k) gv[static_cast<std::size_t>(p) * c + k] += g_lum / c;
    }
    if (c == 3) {
      const double g_chvar =
          100.0 * cfg.struct_w_balance * (-cfg.struct_balance_gain * t_balance * t_balance);
      for (int k = 0; k < 3; ++k) {
        const double g_chmean = g_chvar * 2.0 * (ch_mean[k] - ch_avg) / 3.0;
        for (int p = 0; p < nv; ++p) gv[static_cast<std::size_t>(p) * 3 + k] += g_chmean / nv;
      }
    }
    const double inv = grad_scale / (view.bh * view.bw);
    for (int p = 0; p < view.vh; ++p)
      for (int q = 0; q < view.vw; ++q)
        for (int k = 0; k < c; ++k) {
          const double g = gv[(static_cast<std::size_t>(p) * view.vw + q) * c + k] * inv;
          for (int y = p * view.bh; y < (p + 1) * view.bh; ++y)
            for (int x = q * view.bw; x < (q + 1) * view.bw; ++x) grad->at(y, x, k) += g;
        }
  }
  return score;
}

// ---------------------------------------------------------------------------
// Normalization and ensemble

/// Fixed-bound affine map to [0,1]; role B is inverted (100 - b) first.
inline double normalize(const RawScore& raw, const IqaConfig& cfg) {
  const NormBounds* b = nullptr;
  double v = raw.value;
  switch (raw.metric) {
    case Metric::A_sharpness: b = &cfg.bounds_a; break;
    case Metric::B_distortion: b = &cfg.bounds_b; v = 100.0 - v; break;
    case Metric::C_structure: b = &cfg.bounds_c; break;
  }
  return std::clamp((v - b->lo) / (b->hi - b->lo), 0.0, 1.0);
}

/// d normalize / d raw (zero where the clamp is active).
inline double normalize_deriv(const RawScore& raw, const IqaConfig& cfg) {
  const NormBounds* b = nullptr;
  double v = raw.value;
  double sign = 1.0;
  switch (raw.metric) {
    case Metric::A_sharpness: b = &cfg.bounds_a; break;
    case Metric::B_distortion: b = &cfg.bounds_b; v = 100.0 - v; sign = -1.0; break;
    case Metric::C_structure: b = &cfg.bounds_c; break;
  }
  const double t = (v - b->lo) / (b->hi - b->lo);
  if (t < 0.0 || t > 1.0) return 0.0;
  return sign / (b->hi - b->lo);
}

struct ScoreVector {
  double a = 0.0, b = 0.0, c = 0.0;                 // raw
  double a_norm = 0.0, b_norm = 0.0, c_norm = 0.0;  // b_norm is the inverted-normalized value

  std::array<double, 3> normalized() const { return {a_norm, b_norm, c_norm}; }
};

inline double ensemble(const ScoreVector& sv) {
  return kEnsembleWeights[0] * sv.a_norm + kEnsembleWeights[1] * sv.b_norm + kEnsembleWeights[2] * sv.c_norm;
}

/// Scores with all three roles. When `grad` is non-null, d(ensemble)/d(pixel)
/// scaled by `grad_scale` is accumulated into it.
inline ScoreVector score_image(const Image& img, const IqaConfig& cfg, Image* grad = nullptr, double grad_scale = 1.0) {
  ScoreVector sv;
  if (grad == nullptr) {
    sv.a = score_sharpness(img, cfg);
    sv.b = score_distortion(img, cfg);
    sv.c = score_structure(img, cfg);
  } else {
    if (!grad->same_shape(img)) throw std::invalid_argument("score_image: gradient buffer shape mismatch");
    // Chain through normalization first: the scorers accumulate their own scaled gradients.
    const RawScore ra{score_sharpness(img, cfg), Metric::A_sharpness};
    const RawScore rb{score_distortion(img, cfg), Metric::B_distortion};
    const RawScore rc{score_structure(img, cfg), Metric::C_structure};
    const double sa = grad_scale * kEnsembleWeights[0] * normalize_deriv(ra, cfg);
    const double sb = grad_scale * kEnsembleWeights[1] * normalize_deriv(rb, cfg);
    const double sc = grad_scale * kEnsembleWeights[2] * normalize_deriv(rc, cfg);
    if (sa != 0.0) score_sharpness(img, cfg, grad, sa);
    if (sb != 0.0) score_distortion(img, cfg, grad, sb);
    if (sc != 0.0) score_structure(img, cfg, grad, sc);
    sv.a = ra.value;
    sv.b = rb.value;
    sv.c = rc.value;
  }
  sv.a_norm = normalize({sv.a, Metric::A_sharpness}, cfg);
  sv.b_norm = normalize({sv.b, Metric::B_distortion}, cfg);
  sv.c_norm = normalize({sv.c, Metric::C_structure}, cfg);
  return sv;
}

inline double ensemble_score(const Image& img, const IqaConfig& cfg, Image* grad = nullptr, double grad_scale = 1.0) {
  return ensemble(score_image(img, cfg, grad, grad_scale));
}

// ---------------------------------------------------------------------------
// Block-wise weight map

struct WeightMap {
  int height = 0;
  int width = 0;
  std::array<double, 4> block_scores{};
  std::array<double, 4> block_weights{};
  std::vector<double> weights;  // height*width, piecewise constant over the 2x2 grid

  double at(int y, int x) const { return weights[static_cast<std::size_t>(y) * width + x]; }
};

/// Scores each 2x2 block with the ensemble, upsamples nearest-neighbour and renormalizes to mean 1.
inline WeightMap blockwise_weight_map(const Image& img, const IqaConfig& cfg) {
  iqa_detail::require_min_size(img, 2 * kMinScorerSize, "blockwise_weight_map");
  WeightMap wm;
  wm.height = img.height();
  wm.width = img.width();
  const auto regions = block_regions(img.height(), img.width());
  double weighted_sum = 0.0;
  for (int b = 0; b < 4; ++b) {
    wm.block_scores[b] = ensemble_score(crop(img, regions[b]), cfg);
    weighted_sum += wm.block_scores[b] * regions[b].w * regions[b].h;
  }
  const double mean = weighted_sum / static_cast<double>(img.pixel_count());
  for (int b = 0; b < 4; ++b) wm.block_weights[b] = mean > 0.0 ? wm.block_scores[b] / mean : 1.0;
  wm.weights.assign(img.pixel_count(), 0.0);
  for (int b = 0; b < 4; ++b) {
    const auto& r = regions[b];
    for (int y = r.y0; y < r.y0 + r.h; ++y)
      for (int x = r.x0; x < r.x0 + r.w; ++x) wm.weights[static_cast<std::size_t>(y) * wm.width + x] = wm.block_weights[b];
  }
  return wm;
}

inline WeightMap uniform_weight_map(int height, int width) {
  WeightMap wm;
  wm.height = height;
  wm.width = width;
  wm.block_scores.fill(1.0);
  wm.block_weights.fill(1.0);
  wm.weights.assign(static_cast<std::size_t>(height) * width, 1.0);
  return wm;
}

}  // namespace qualiteacher
