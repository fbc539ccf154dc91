#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "qualiteacher/image.hpp"
#include "qualiteacher/iqa.hpp"
#include "qualiteacher/rng.hpp"

namespace qualiteacher {

/// Procedural clean scene: low-frequency sinusoidal texture, a faint fine
/// texture, and 2-3 anti-aliased rectangles/discs. Mean luminance lands in
/// [0.35, 0.65] and gradient energy is always nonzero.
inline Image generate_clean(std::uint64_t seed, int height = 24, int width = 24, int channels = 1) {
  Rng rng(derive_seed(seed, 0xC1EA));
  const double pi = std::numbers::pi;
  const double target_mean = rng.uniform(0.42, 0.58);
  std::vector<double> lum(static_cast<std::size_t>(height) * width, 0.0);

  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> waves;
  for (int k = 0; k < 4; ++k) {
    const double cycles = rng.uniform(0.5, 3.0);
    const double theta = rng.uniform(0.0, pi);
    waves.push_back({cycles * std::cos(theta), cycles * std::sin(theta), rng.uniform(0.0, 2.0 * pi), rng.uniform(0.03, 0.09)});
  }
  {
    const double cycles = rng.uniform(4.0, 7.0);
    const double theta = rng.uniform(0.0, pi);
    waves.push_back({cycles * std::cos(theta), cycles * std::sin(theta), rng.uniform(0.0, 2.0 * pi), rng.uniform(0.01, 0.025)});
  }

  struct Shape { bool disc; double cx, cy, rx, ry, level; };
  std::vector<Shape> shapes;
  const int n_shapes = rng.uniform_int(2, 3);
  for (int k = 0; k < n_shapes; ++k) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    shapes.push_back({rng.uniform() < 0.5, rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.1, 0.3),
                      rng.uniform(0.1, 0.3), sign * rng.uniform(0.08, 0.2)});
  }

  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width, v = (y + 0.5) / height;
      double val = 0.0;
      for (const auto& wv : waves) val += wv.amp * std::sin(2.0 * pi * (wv.fx * u + wv.fy * v) + wv.phase);
      for (const auto& s : shapes) {
        // signed distance in pixels, positive inside; 1-pixel linear ramp for anti-aliasing
        double dist;
        if (s.disc) {
          const double dx = (u - s.cx) / s.rx, dy = (v - s.cy) / s.ry;
          dist = (1.0 - std::sqrt(dx * dx + dy * dy)) * std::min(s.rx * width, s.ry * height);
        } else {
          dist = std::min(s.rx * width - std::abs(u - s.cx) * width, s.ry * height - std::abs(v - s.cy) * height);
        }
        val += s.level * std::clamp(dist + 0.5, 0.0, 1.0);
      }
      lum[static_cast<std::size_t>(y) * width + x] = val;
    }

  double mean = 0.0;
  for (double v : lum) mean += v;
  mean /= static_cast<double>(lum.size());

  Image img(height, width, channels);
  std::array<double, 3> tint{0.0, 0.0, 0.0};
  if (channels == 3)
    for (auto& t : tint) t = rng.uniform(-0.04, 0.04);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(y, x, c) = std::clamp(lum[static_cast<std::size_t>(y) * width + x] - mean + target_mean + tint[c], 0.0, 1.0);
  return img;
}

// ---------------------------------------------------------------------------
// Degradations

struct DegradationSpec {
  double noise_sigma = 0.0;  // [0, 0.3]
  int blur_radius = 0;       // {0, 1, 2}
  double veil_strength = 0.0;  // [0, 0.8], blend toward kVeilLevel
  double gamma = 1.0;          // [1, 3]
  std::uint64_t seed = 0;

  bool is_identity() const { return noise_sigma == 0.0 && blur_radius == 0 && veil_strength == 0.0 && gamma == 1.0; }
};

inline constexpr double kVeilLevel = 0.9;

struct DegradationRange {
  double noise_lo = 0.0, noise_hi = 0.1;
  int blur_lo = 0, blur_hi = 1;
  double veil_lo = 0.0, veil_hi = 0.3;
  double gamma_lo = 1.0, gamma_hi = 1.5;
};

/// Paired stream: mild corruption with known clean targets.
inline DegradationRange paired_range() { return {0.0, 0.1, 0, 1, 0.0, 0.3, 1.0, 1.5}; }
/// Unpaired stream: heavier noise, outside the paired range.
inline DegradationRange unpaired_range() { return {0.1, 0.25, 0, 2, 0.0, 0.4, 1.0, 1.8}; }

inline DegradationSpec sample_degradation(const DegradationRange& r, Rng& rng) {
  DegradationSpec s;
  s.noise_sigma = rng.uniform(r.noise_lo, r.noise_hi);
  s.blur_radius = rng.uniform_int(r.blur_lo, r.blur_hi);
  s.veil_strength = rng.uniform(r.veil_lo, r.veil_hi);
  s.gamma = rng.uniform(r.gamma_lo, r.gamma_hi);
  s.seed = rng.next_u64();
  return s;
}

namespace synth_detail {

// Separable box blur with replicated borders.
inline Image box_blur(const Image& img, int radius) {
  const int h = img.height(), w = img.width(), c = img.channels();
  const double inv = 1.0 / (2 * radius + 1);
  Image tmp(h, w, c), out(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += img.at(y, std::clamp(x + d, 0, w - 1), k);
        tmp.at(y, x, k) = acc * inv;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) acc += tmp.at(std::clamp(y + d, 0, h - 1), x, k);
        out.at(y, x, k) = acc * inv;
      }
  return out;
}

}  // namespace synth_detail

/// blur -> veil -> gamma -> noise -> clamp. Stages at their identity value are skipped,
/// so the identity spec returns the input unchanged.
inline Image degrade(const Image& img, const DegradationSpec& spec) {
  Image out = img;
  if (spec.blur_radius > 0) out = synth_detail::box_blur(out, spec.blur_radius);
  if (spec.veil_strength != 0.0)
    for (auto& v : out.data()) v = v * (1.0 - spec.veil_strength) + spec.veil_strength * kVeilLevel;
  if (spec.gamma != 1.0)
    for (auto& v : out.data()) v = std::pow(std::max(v, 0.0), spec.gamma);
  if (spec.noise_sigma != 0.0) {
    Rng rng(spec.seed);
    for (auto& v : out.data()) v += spec.noise_sigma * rng.normal();
  }
  out.clamp();
  return out;
}

// ---------------------------------------------------------------------------
// Reward-hacking probe

struct PatchAttack {
  Image image;
  CropRegion patched;  // the quadrant carrying the pattern
};

/// Adds a +/-amplitude pixel checkerboard to one random quadrant. The pattern
/// inflates the sharpness score while being spatially non-uniform.
inline PatchAttack adversarial_patch_attack(const Image& img, Rng& rng, double amplitude = 0.06) {
  if (img.height() < 16 || img.width() < 16) throw std::invalid_argument("adversarial_patch_attack: image must be at least 16x16");
  const int q = rng.uniform_int(0, 3);
  const CropRegion r = quarter_region(img.height(), img.width(), (q % 2) * (img.width() - img.width() / 2),
                                      (q / 2) * (img.height() - img.height() / 2));
  PatchAttack out{img, r};
  if (amplitude == 0.0) return out;
  for (int y = r.y0; y < r.y0 + r.h; ++y)
    for (int x = r.x0; x < r.x0 + r.w; ++x)
      for (int c = 0; c < img.channels(); ++c) {
        const double s = ((x + y) % 2 == 0) ? amplitude : -amplitude;
        out.image.at(y, x, c) = std::clamp(img.at(y, x, c) + s, 0.0, 1.0);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

inline std::vector<Image> calibration_corpus(int count = 256, int height = 24, int width = 24) {
  std::vector<Image> corpus;
  corpus.reserve(count);
  for (int i = 0; i < count; ++i) corpus.push_back(generate_clean(static_cast<std::uint64_t>(i), height, width));
  return corpus;
}

/// Mean MSCN second/fourth moments over a clean corpus: the role-B reference constants.
inline MscnMoments calibrate_distortion_reference(const std::vector<Image>& corpus, double eps = 1e-3) {
  MscnMoments ref;
  for (const auto& img : corpus) {
    const auto m = mscn_moments(img, eps);
    ref.m2 += m.m2;
    ref.m4 += m.m4;
  }
  ref.m2 /= static_cast<double>(corpus.size());
  ref.m4 /= static_cast<double>(corpus.size());
  return ref;
}

}  // namespace qualiteacher
