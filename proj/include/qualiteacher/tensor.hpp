#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "qualiteacher/image.hpp"

namespace qualiteacher {

/// Channel-major feature map (C x H x W). Internal to the restorer.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

  double* plane(int k) { return v.data() + static_cast<std::size_t>(k) * h * w; }
  const double* plane(int k) const { return v.data() + static_cast<std::size_t>(k) * h * w; }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

inline Tensor to_tensor(const Image& img) {
  Tensor t(img.channels(), img.height(), img.width());
  const int c = img.channels();
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    for (int k = 0; k < c; ++k) t.v[k * t.plane_size() + p] = img.data()[p * c + k];
  return t;
}

inline Image to_image(const Tensor& t) {
  Image img(t.h, t.w, t.c);
  for (std::size_t p = 0; p < t.plane_size(); ++p)
    for (int k = 0; k < t.c; ++k) img.data()[p * t.c + k] = t.v[k * t.plane_size() + p];
  return img;
}

namespace ops {

/// 3x3 convolution, stride 1, zero padding. Weights laid out [cout][cin][3][3].
inline Tensor conv3x3(const Tensor& in, const std::vector<double>& weight, const std::vector<double>& bias, int cout) {
  Tensor out(cout, in.h, in.w);
  const int h = in.h, w = in.w;
  for (int co = 0; co < cout; ++co) {
    double* o = out.plane(co);
    std::fill(o, o + out.plane_size(), bias[co]);
    for (int ci = 0; ci < in.c; ++ci) {
      const double* src = in.plane(ci);
      const double* k = weight.data() + (static_cast<std::size_t>(co) * in.c + ci) * 9;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int y = y0; y < y1; ++y) {
            double* orow = o + y * w;
            const double* irow = src + (y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
    }
  }
  return out;
}

/// Accumulates weight/bias gradients and (optionally) the input gradient.
inline void conv3x3_backward(const Tensor& in, const std::vector<double>& weight, const Tensor& gout,
                             std::vector<double>& gweight, std::vector<double>& gbias, Tensor* gin) {
  const int h = in.h, w = in.w;
  for (int co = 0; co < gout.c; ++co) {
    const double* g = gout.plane(co);
    double bsum = 0.0;
    for (std::size_t p = 0; p < gout.plane_size(); ++p) bsum += g[p];
    gbias[co] += bsum;
    for (int ci = 0; ci < in.c; ++ci) {
      const double* src = in.plane(ci);
      double* gsrc = gin != nullptr ? gin->plane(ci) : nullptr;
      const std::size_t kofs = (static_cast<std::size_t>(co) * in.c + ci) * 9;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = weight[kofs + ky * 3 + kx];
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          double acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = g + y * w;
            const double* irow = src + (y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) acc += irow[x] * grow[x];
            if (gsrc != nullptr) {
              double* girow = gsrc + (y + dy) * w + dx;
              for (int x = x0; x < x1; ++x) girow[x] += wv * grow[x];
            }
          }
          gweight[kofs + ky * 3 + kx] += acc;
        }
    }
  }
}

/// x * sigmoid(x)
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_deriv(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

inline Tensor silu(const Tensor& pre) {
  Tensor out = pre;
  for (auto& v : out.v) v = silu(v);
  return out;
}

/// gin = gout * silu'(pre)
inline Tensor silu_backward(const Tensor& pre, const Tensor& gout) {
  Tensor g = gout;
  for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] *= silu_deriv(pre.v[i]);
  return g;
}

inline Tensor avgpool2(const Tensor& in) {
  Tensor out(in.c, in.h / 2, in.w / 2);
  for (int k = 0; k < in.c; ++k) {
    const double* s = in.plane(k);
    double* o = out.plane(k);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        o[y * out.w + x] =
            0.25 * (s[2 * y * in.w + 2 * x] + s[2 * y * in.w + 2 * x + 1] + s[(2 * y + 1) * in.w + 2 * x] + s[(2 * y + 1) * in.w + 2 * x + 1]);
  }
  return out;
}

inline Tensor avgpool2_backward(const Tensor& gout, int in_h, int in_w) {
  Tensor g(gout.c, in_h, in_w);
  for (int k = 0; k < gout.c; ++k) {
    const double* go = gout.plane(k);
    double* gi = g.plane(k);
    for (int y = 0; y < gout.h; ++y)
      for (int x = 0; x < gout.w; ++x) {
        const double v = 0.25 * go[y * gout.w + x];
        gi[2 * y * in_w + 2 * x] += v;
        gi[2 * y * in_w + 2 * x + 1] += v;
        gi[(2 * y + 1) * in_w + 2 * x] += v;
        gi[(2 * y + 1) * in_w + 2 * x + 1] += v;
      }
  }
  return g;
}

/// Nearest-neighbour 2x upsampling.
inline Tensor upsample2(const Tensor& in) {
  Tensor out(in.c, in.h * 2, in.w * 2);
  for (int k = 0; k < in.c; ++k) {
    const double* s = in.plane(k);
    double* o = out.plane(k);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) o[y * out.w + x] = s[(y / 2) * in.w + x / 2];
  }
  return out;
}

inline Tensor upsample2_backward(const Tensor& gout) {
  Tensor g(gout.c, gout.h / 2, gout.w / 2);
  for (int k = 0; k < gout.c; ++k) {
    const double* go = gout.plane(k);
    double* gi = g.plane(k);
    for (int y = 0; y < gout.h; ++y)
      for (int x = 0; x < gout.w; ++x) gi[(y / 2) * g.w + x / 2] += go[y * gout.w + x];
  }
  return g;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

}  // namespace ops
}  // namespace qualiteacher
