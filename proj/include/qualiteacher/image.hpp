#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qualiteacher {

/// Floating-point raster, row-major with interleaved channels (index = (y*W + x)*C + c).
/// Pixel values live in [0,1]; loaders and clamp() enforce that.
class Image {
public:
  Image() = default;

  Image(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    if (height < 1 || width < 1) {
      throw std::invalid_argument("Image: dimensions must be positive, got " + std::to_string(height) + "x" +
                                  std::to_string(width));
    }
    if (channels != 1 && channels != 3) {
      throw std::invalid_argument("Image: channels must be 1 or 3, got " + std::to_string(channels));
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  Image(int height, int width, int channels, std::vector<double> data) : Image(height, width, channels) {
    if (data.size() != data_.size()) {
      throw std::invalid_argument("Image: data length " + std::to_string(data.size()) + " does not match " +
                                  std::to_string(data_.size()));
    }
    data_ = std::move(data);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::size_t index(int y, int x, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Image& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  void clamp() {
    for (auto& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Largest absolute per-element difference; shapes must agree.
inline double linf_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("linf_distance: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

inline double mean_value(const Image& img) {
  double acc = 0.0;
  for (double v : img.data()) acc += v;
  return acc / static_cast<double>(img.size());
}

/// Peak signal-to-noise ratio in dB for signals on [0,1].
inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

// ---------------------------------------------------------------------------
// Geometric transforms

enum class Transform { HFlip, VFlip, Rot90 };

inline constexpr std::array<Transform, 3> kAugmentations = {Transform::HFlip, Transform::VFlip, Transform::Rot90};

inline const char* to_string(Transform t) {
  switch (t) {
    case Transform::HFlip: return "hflip";
    case Transform::VFlip: return "vflip";
    case Transform::Rot90: return "rot90";
  }
  return "?";
}

namespace detail {

// Rot90 maps source (i, j) of an HxW image to (j, H-1-i) of a WxH image.
inline Image rot90(const Image& img) {
  const int h = img.height(), w = img.width(), c = img.channels();
  Image out(w, h, c);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) out.at(j, h - 1 - i, k) = img.at(i, j, k);
  return out;
}

// Exact inverse of rot90: reads source (j, H-1-i) back into (i, j).
inline Image rot90_inverse(const Image& img) {
  const int h = img.width(), w = img.height(), c = img.channels();
  Image out(h, w, c);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) out.at(i, j, k) = img.at(j, h - 1 - i, k);
  return out;
}

inline Image hflip(const Image& img) {
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int k = 0; k < img.channels(); ++k) out.at(y, img.width() - 1 - x, k) = img.at(y, x, k);
  return out;
}

inline Image vflip(const Image& img) {
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int k = 0; k < img.channels(); ++k) out.at(img.height() - 1 - y, x, k) = img.at(y, x, k);
  return out;
}

}  // namespace detail

/// Applies the transform identically to every channel. Pixel values are only moved, never changed.
inline Image apply_transform(const Image& img, Transform t) {
  switch (t) {
    case Transform::HFlip: return detail::hflip(img);
    case Transform::VFlip: return detail::vflip(img);
    case Transform::Rot90: return detail::rot90(img);
  }
  throw std::invalid_argument("apply_transform: unknown transform");
}

inline Image invert_transform(const Image& img, Transform t) {
  switch (t) {
    case Transform::HFlip: return detail::hflip(img);
    case Transform::VFlip: return detail::vflip(img);
    case Transform::Rot90: return detail::rot90_inverse(img);
  }
  throw std::invalid_argument("invert_transform: unknown transform");
}

/// Checked inverse: rejects inputs whose dimensions could not have come from
/// transforming an image of the given original shape.
inline Image invert_transform(const Image& img, Transform t, int original_height, int original_width) {
  const bool swaps = t == Transform::Rot90;
  const int expect_h = swaps ? original_width : original_height;
  const int expect_w = swaps ? original_height : original_width;
  if (img.height() != expect_h || img.width() != expect_w) {
    throw std::invalid_argument(std::string("invert_transform: ") + to_string(t) + " inverse expects " +
                                std::to_string(expect_h) + "x" + std::to_string(expect_w) + ", got " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  return invert_transform(img, t);
}

// ---------------------------------------------------------------------------
// Cropping and block partition

struct CropRegion {
  int x0 = 0;
  int y0 = 0;
  int w = 1;
  int h = 1;

  friend bool operator==(const CropRegion&, const CropRegion&) = default;
};

inline bool region_fits(const CropRegion& r, int height, int width) {
  return r.w >= 1 && r.h >= 1 && r.x0 >= 0 && r.y0 >= 0 && r.x0 + r.w <= width && r.y0 + r.h <= height;
}

inline Image crop(const Image& img, const CropRegion& r) {
  if (!region_fits(r, img.height(), img.width())) {
    throw std::invalid_argument("crop: region (x0=" + std::to_string(r.x0) + ", y0=" + std::to_string(r.y0) +
                                ", w=" + std::to_string(r.w) + ", h=" + std::to_string(r.h) + ") outside " +
                                std::to_string(img.height()) + "x" + std::to_string(img.width()) + " image");
  }
  Image out(r.h, r.w, img.channels());
  const int c = img.channels();
  for (int y = 0; y < r.h; ++y) {
    const double* src = img.data().data() + img.index(r.y0 + y, r.x0);
    std::copy(src, src + static_cast<std::size_t>(r.w) * c, out.data().data() + out.index(y, 0));
  }
  return out;
}

/// Quarter-area region (floor(H/2) x floor(W/2)) at the given offset.
inline CropRegion quarter_region(int height, int width, int x0, int y0) {
  return CropRegion{x0, y0, width / 2, height / 2};
}

/// Writes `patch` into `dst` at the region's offset; the inverse of crop for gradient scattering.
inline void paste(Image& dst, const Image& patch, const CropRegion& r) {
  if (patch.height() != r.h || patch.width() != r.w || patch.channels() != dst.channels() ||
      !region_fits(r, dst.height(), dst.width())) {
    throw std::invalid_argument("paste: patch does not match region");
  }
  const int c = dst.channels();
  for (int y = 0; y < r.h; ++y) {
    const double* src = patch.data().data() + patch.index(y, 0);
    std::copy(src, src + static_cast<std::size_t>(r.w) * c, dst.data().data() + dst.index(r.y0 + y, r.x0));
  }
}

/// 2x2 grid of regions; the first block row/column takes the ceiling half.
inline std::array<CropRegion, 4> block_regions(int height, int width) {
  if (height < 2 || width < 2) {
    throw std::invalid_argument("block_partition: image must be at least 2x2, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  const int h0 = (height + 1) / 2, w0 = (width + 1) / 2;
  return {CropRegion{0, 0, w0, h0}, CropRegion{w0, 0, width - w0, h0}, CropRegion{0, h0, w0, height - h0},
          CropRegion{w0, h0, width - w0, height - h0}};
}

/// Blocks in row-major grid order: (0,0), (0,1), (1,0), (1,1).
inline std::array<Image, 4> block_partition(const Image& img) {
  const auto regions = block_regions(img.height(), img.width());
  return {crop(img, regions[0]), crop(img, regions[1]), crop(img, regions[2]), crop(img, regions[3])};
}

inline Image assemble_blocks(const std::array<Image, 4>& blocks) {
  const int h = blocks[0].height() + blocks[2].height();
  const int w = blocks[0].width() + blocks[1].width();
  Image out(h, w, blocks[0].channels());
  const auto regions = block_regions(h, w);
  for (int b = 0; b < 4; ++b) paste(out, blocks[b], regions[b]);
  return out;
}

}  // namespace qualiteacher
