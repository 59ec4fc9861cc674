#pragma once

#include <zlib.h>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sfmk/common.hpp"
#include "sfmk/tensor.hpp"

namespace sfmk {

// Plain-data image files: PNG (8-bit gray/RGB and 16-bit gray, the depth-map
// convention) and binary PPM. Pixels map to tensors shaped (C,H,W) in [0,1];
// depth maps use value/256 with 0 meaning invalid.

namespace detail {

inline void io_require(bool ok, const std::string& msg) {
  if (!ok) throw IoError(msg);
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  io_require(static_cast<bool>(is), "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

inline uint32_t be32(const unsigned char* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void push_be32(std::vector<unsigned char>& v, uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

inline void push_chunk(std::vector<unsigned char>& out, const char type[4],
                       const std::vector<unsigned char>& data) {
  push_be32(out, static_cast<uint32_t>(data.size()));
  std::vector<unsigned char> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  push_be32(out, static_cast<uint32_t>(
                     crc32(0, body.data(), static_cast<uInt>(body.size()))));
}

inline std::vector<unsigned char> zlib_deflate(
    const std::vector<unsigned char>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> out(bound);
  io_require(compress2(out.data(), &bound, raw.data(),
                       static_cast<uLong>(raw.size()), 6) == Z_OK,
             "png: deflate failed");
  out.resize(bound);
  return out;
}

inline std::vector<unsigned char> zlib_inflate(
    const std::vector<unsigned char>& comp, size_t expect) {
  std::vector<unsigned char> out(expect);
  uLongf len = static_cast<uLongf>(expect);
  io_require(uncompress(out.data(), &len, comp.data(),
                        static_cast<uLong>(comp.size())) == Z_OK &&
                 len == expect,
             "png: inflate failed or size mismatch");
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

struct PngRaw {
  int64_t w = 0, h = 0;
  int channels = 0;   // after decoding (1, 2, 3, or 4)
  int bit_depth = 0;  // 8 or 16
  std::vector<unsigned char> pixels;  // unfiltered scanline bytes
};

inline PngRaw decode_png(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  io_require(bytes.size() > 8 && std::memcmp(bytes.data(), sig, 8) == 0,
             "not a png: " + path);
  PngRaw png;
  int color_type = -1;
  std::vector<unsigned char> idat;
  size_t off = 8;
  while (off + 12 <= bytes.size()) {
    const uint32_t len = be32(&bytes[off]);
    const char* type = reinterpret_cast<const char*>(&bytes[off + 4]);
    io_require(off + 12 + len <= bytes.size(), "png: truncated chunk");
    const unsigned char* data = &bytes[off + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      io_require(len == 13, "png: bad IHDR");
      png.w = be32(data);
      png.h = be32(data + 4);
      png.bit_depth = data[8];
      color_type = data[9];
      io_require(data[12] == 0, "png: interlaced images unsupported");
      io_require(png.bit_depth == 8 || png.bit_depth == 16,
                 "png: only 8- and 16-bit depths supported");
      io_require(color_type == 0 || color_type == 2 || color_type == 4 ||
                     color_type == 6,
                 "png: palette images unsupported");
      png.channels = color_type == 0 ? 1 : color_type == 2 ? 3
                     : color_type == 4 ? 2 : 4;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    off += 12 + len;
  }
  io_require(png.w > 0 && png.h > 0 && !idat.empty(),
             "png: missing IHDR or IDAT in " + path);
  const size_t sample_bytes = png.bit_depth / 8;
  const size_t bpp = png.channels * sample_bytes;
  const size_t row = static_cast<size_t>(png.w) * bpp;
  std::vector<unsigned char> raw =
      zlib_inflate(idat, static_cast<size_t>(png.h) * (row + 1));
  png.pixels.assign(static_cast<size_t>(png.h) * row, 0);
  for (int64_t y = 0; y < png.h; ++y) {
    const unsigned char filter = raw[y * (row + 1)];
    const unsigned char* src = &raw[y * (row + 1) + 1];
    unsigned char* dst = &png.pixels[y * row];
    const unsigned char* up =
        y > 0 ? &png.pixels[(y - 1) * row] : nullptr;
    for (size_t x = 0; x < row; ++x) {
      const int a = x >= bpp ? dst[x - bpp] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= bpp) ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("png: unknown filter type");
      }
      dst[x] = static_cast<unsigned char>(v & 0xff);
    }
  }
  return png;
}

inline void write_png_bytes(const std::string& path, int64_t w, int64_t h,
                            int channels, int bit_depth,
                            const std::vector<unsigned char>& pixels) {
  const int color_type = channels == 1 ? 0 : 2;
  require(channels == 1 || channels == 3, "png write: 1 or 3 channels only");
  const size_t row = static_cast<size_t>(w) * channels * (bit_depth / 8);
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<size_t>(h) * (row + 1));
  for (int64_t y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), pixels.begin() + y * row,
               pixels.begin() + (y + 1) * row);
  }
  std::vector<unsigned char> out(
      {137, 80, 78, 71, 13, 10, 26, 10});
  std::vector<unsigned char> ihdr;
  push_be32(ihdr, static_cast<uint32_t>(w));
  push_be32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(static_cast<unsigned char>(bit_depth));
  ihdr.push_back(static_cast<unsigned char>(color_type));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  push_chunk(out, "IHDR", ihdr);
  push_chunk(out, "IDAT", zlib_deflate(raw));
  push_chunk(out, "IEND", {});
  std::ofstream os(path, std::ios::binary);
  io_require(static_cast<bool>(os), "cannot write " + path);
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
  io_require(static_cast<bool>(os), "failed writing " + path);
}

}  // namespace detail

// 8-bit image (1 or 3 channels) from a (C,H,W) tensor in [0,1].
inline void write_png(const std::string& path, const Tensor& img) {
  require(img.rank() == 3, "write_png: image must be (C,H,W)");
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<unsigned char> px(static_cast<size_t>(c * h * w));
  const auto& d = img.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch) {
        real v = std::min(real(1), std::max(real(0),
                                            d[(ch * h + y) * w + x]));
        px[(y * w + x) * c + ch] =
            static_cast<unsigned char>(std::lround(v * 255));
      }
  detail::write_png_bytes(path, w, h, static_cast<int>(c), 8, px);
}

// Any supported PNG to a (C,H,W) tensor in [0,1]; alpha channels are
// dropped. 16-bit files scale by 65535.
inline Tensor read_png(const std::string& path) {
  detail::PngRaw png = detail::decode_png(path);
  const int keep = png.channels == 2 ? 1 : png.channels == 4 ? 3
                                                             : png.channels;
  Tensor img = Tensor::zeros({keep, png.h, png.w});
  auto& d = img.data();
  const size_t sb = png.bit_depth / 8;
  const real scale = png.bit_depth == 8 ? real(255) : real(65535);
  for (int64_t y = 0; y < png.h; ++y)
    for (int64_t x = 0; x < png.w; ++x)
      for (int ch = 0; ch < keep; ++ch) {
        const unsigned char* p =
            &png.pixels[((y * png.w + x) * png.channels + ch) * sb];
        const uint32_t v = png.bit_depth == 8
                               ? *p
                               : (uint32_t(p[0]) << 8) | uint32_t(p[1]);
        d[(ch * png.h + y) * png.w + x] = static_cast<real>(v) / scale;
      }
  return img;
}

// Depth maps: 16-bit grayscale, stored value = round(depth * 256), 0 means
// no measurement.
inline void write_depth_png(const std::string& path, const Tensor& depth) {
  require(depth.rank() == 2, "write_depth_png: depth must be (H,W)");
  const int64_t h = depth.dim(0), w = depth.dim(1);
  std::vector<unsigned char> px(static_cast<size_t>(h * w) * 2);
  for (int64_t i = 0; i < h * w; ++i) {
    real v = depth.data()[i] * 256;
    uint32_t q = v <= 0 ? 0
                        : static_cast<uint32_t>(std::min<long>(
                              65535, std::lround(v)));
    px[i * 2] = (q >> 8) & 0xff;
    px[i * 2 + 1] = q & 0xff;
  }
  detail::write_png_bytes(path, w, h, 1, 16, px);
}

inline Tensor read_depth_png(const std::string& path) {
  detail::PngRaw png = detail::decode_png(path);
  detail::io_require(png.channels == 1 && png.bit_depth == 16,
                     "depth png must be 16-bit grayscale: " + path);
  Tensor depth = Tensor::zeros({png.h, png.w});
  for (int64_t i = 0; i < png.h * png.w; ++i) {
    const uint32_t v =
        (uint32_t(png.pixels[i * 2]) << 8) | uint32_t(png.pixels[i * 2 + 1]);
    depth.data()[i] = static_cast<real>(v) / 256;
  }
  return depth;
}

// Binary PPM (P6, maxval 255), the dependency-free fallback format.
inline void write_ppm(const std::string& path, const Tensor& img) {
  require(img.rank() == 3 && img.dim(0) == 3, "write_ppm: image must be "
          "(3,H,W)");
  const int64_t h = img.dim(1), w = img.dim(2);
  std::ofstream os(path, std::ios::binary);
  detail::io_require(static_cast<bool>(os), "cannot write " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  const auto& d = img.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        real v = std::min(real(1), std::max(real(0),
                                            d[(ch * h + y) * w + x]));
        os.put(static_cast<char>(std::lround(v * 255)));
      }
  detail::io_require(static_cast<bool>(os), "failed writing " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  detail::io_require(static_cast<bool>(is), "cannot open " + path);
  std::string magic;
  is >> magic;
  detail::io_require(magic == "P6", "not a binary ppm: " + path);
  auto next_token = [&is, &path]() {
    std::string tok;
    // Skip whitespace and '#' comment lines between header fields.
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    is >> tok;
    detail::io_require(static_cast<bool>(is), "ppm: truncated header in " +
                                                  path);
    return tok;
  };
  const int64_t w = std::stoll(next_token());
  const int64_t h = std::stoll(next_token());
  const int64_t maxval = std::stoll(next_token());
  detail::io_require(w > 0 && h > 0 && maxval == 255,
                     "ppm: unsupported header in " + path);
  is.get();  // single whitespace after maxval
  std::vector<unsigned char> px(static_cast<size_t>(3 * h * w));
  is.read(reinterpret_cast<char*>(px.data()),
          static_cast<std::streamsize>(px.size()));
  detail::io_require(is.gcount() == static_cast<std::streamsize>(px.size()),
                     "ppm: truncated pixel data in " + path);
  Tensor img = Tensor::zeros({3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img.data()[(ch * h + y) * w + x] =
            static_cast<real>(px[(y * w + x) * 3 + ch]) / 255;
  return img;
}

}  // namespace sfmk
