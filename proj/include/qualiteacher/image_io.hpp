#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "qualiteacher/image.hpp"

namespace qualiteacher {

/// Raised for malformed or truncated image files; the message names the byte offset.
class ImageParseError : public std::runtime_error {
public:
  ImageParseError(const std::string& path, std::size_t offset, const std::string& what)
      : std::runtime_error(path + ": parse error at byte offset " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

inline constexpr const char* kRawImageMagic = "QTIMG1\n";

namespace io_detail {

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image file '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_all(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image file '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

inline std::uint32_t float_bits_le(float f) {
  auto u = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  return u;
}

inline float float_from_le(const unsigned char* p) {
  std::uint32_t u;
  std::memcpy(&u, p, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  return std::bit_cast<float>(u);
}

// Cursor over a byte buffer for the ASCII headers of the raw and netpbm formats.
struct Cursor {
  const std::vector<unsigned char>& buf;
  const std::string& path;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  long read_uint(const char* field) {
    skip_space_and_comments();
    if (pos >= buf.size()) throw ImageParseError(path, pos, std::string("unexpected end of file reading ") + field);
    if (!std::isdigit(buf[pos])) throw ImageParseError(path, pos, std::string("expected integer for ") + field);
    long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1'000'000) throw ImageParseError(path, pos, std::string(field) + " out of range");
      ++pos;
    }
    return v;
  }
};

inline double quantized(double v) {
  return std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Raw float format: "QTIMG1\n", "H W C\n", then little-endian float32 values row-major.

inline std::string encode_raw(const Image& img) {
  std::string out = kRawImageMagic;
  out += std::to_string(img.height()) + " " + std::to_string(img.width()) + " " + std::to_string(img.channels()) + "\n";
  const std::size_t header = out.size();
  out.resize(header + img.size() * 4);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint32_t u = io_detail::float_bits_le(static_cast<float>(img.data()[i]));
    std::memcpy(out.data() + header + 4 * i, &u, 4);
  }
  return out;
}

inline Image decode_raw(const std::vector<unsigned char>& buf, const std::string& path = "<memory>") {
  const std::size_t magic_len = std::strlen(kRawImageMagic);
  if (buf.size() < magic_len || std::memcmp(buf.data(), kRawImageMagic, magic_len) != 0) {
    throw ImageParseError(path, 0, "missing QTIMG1 magic");
  }
  io_detail::Cursor cur{buf, path, magic_len};
  const long h = cur.read_uint("height");
  const long w = cur.read_uint("width");
  const long c = cur.read_uint("channels");
  if (cur.pos >= buf.size() || buf[cur.pos] != '\n') throw ImageParseError(path, cur.pos, "expected newline after header");
  ++cur.pos;
  if (h < 1 || w < 1 || (c != 1 && c != 3)) throw ImageParseError(path, cur.pos, "invalid header dimensions");
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  if (buf.size() - cur.pos < n * 4) {
    throw ImageParseError(path, buf.size(), "truncated pixel data: expected " + std::to_string(n * 4) + " bytes, found " +
                                                std::to_string(buf.size() - cur.pos));
  }
  Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (std::size_t i = 0; i < n; ++i) {
    const float f = io_detail::float_from_le(buf.data() + cur.pos + 4 * i);
    if (!std::isfinite(f)) throw ImageParseError(path, cur.pos + 4 * i, "non-finite pixel value");
    img.data()[i] = std::clamp(static_cast<double>(f), 0.0, 1.0);
  }
  return img;
}

// ---------------------------------------------------------------------------
// 8-bit netpbm: P5 for one channel, P6 for three. Quantization rounds half up.

inline std::string encode_netpbm(const Image& img) {
  std::string out = img.channels() == 1 ? "P5\n" : "P6\n";
  out += std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (double v : img.data()) out.push_back(static_cast<char>(static_cast<unsigned char>(io_detail::quantized(v))));
  return out;
}

inline Image decode_netpbm(const std::vector<unsigned char>& buf, const std::string& path = "<memory>") {
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6')) {
    throw ImageParseError(path, 0, "expected P5 or P6 netpbm magic");
  }
  const int channels = buf[1] == '5' ? 1 : 3;
  io_detail::Cursor cur{buf, path, 2};
  const long w = cur.read_uint("width");
  const long h = cur.read_uint("height");
  const long maxval = cur.read_uint("maxval");
  if (w < 1 || h < 1) throw ImageParseError(path, cur.pos, "invalid dimensions");
  if (maxval < 1 || maxval > 65535) throw ImageParseError(path, cur.pos, "maxval must be in [1, 65535]");
  if (cur.pos >= buf.size() || !std::isspace(buf[cur.pos])) throw ImageParseError(path, cur.pos, "expected whitespace after maxval");
  ++cur.pos;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(h) * w * channels;
  if (buf.size() - cur.pos < n * bytes_per) {
    throw ImageParseError(path, buf.size(), "truncated pixel data: expected " + std::to_string(n * bytes_per) +
                                                " bytes, found " + std::to_string(buf.size() - cur.pos));
  }
  Image img(static_cast<int>(h), static_cast<int>(w), channels);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = buf.data() + cur.pos + bytes_per * i;
    const unsigned v = bytes_per == 2 ? (unsigned(p[0]) << 8 | p[1]) : p[0];
    img.data()[i] = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
  }
  return img;
}

inline bool has_raw_extension(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".qtimg" || ext == ".raw";
}

/// Loads by content sniffing (QTIMG1 magic vs netpbm magic).
inline Image load_image(const std::filesystem::path& path) {
  const auto buf = io_detail::read_all(path);
  if (buf.size() >= 2 && buf[0] == 'P') return decode_netpbm(buf, path.string());
  return decode_raw(buf, path.string());
}

/// Writes raw float for .qtimg/.raw extensions, 8-bit netpbm otherwise.
inline void save_image(const Image& img, const std::filesystem::path& path) {
  io_detail::write_all(path, has_raw_extension(path) ? encode_raw(img) : encode_netpbm(img));
}

}  // namespace qualiteacher
