#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sfmk/random.hpp"
#include "sfmk/tensor.hpp"

namespace sfmk {

// The 15 corruption families, grouped noise / blur / weather / digital.
inline const std::vector<std::string>& corruption_names() {
  static const std::vector<std::string> names = {
      "gaussian_noise", "shot_noise", "impulse_noise",
      "defocus_blur", "glass_blur", "motion_blur", "zoom_blur",
      "snow", "frost", "fog", "brightness",
      "contrast", "elastic", "pixelate", "jpeg"};
  return names;
}

struct CorruptionSpec {
  std::string name;
  int severity = 5;
};

// Severity ramp, one line per (corruption, parameter), columns are
// severities 1..5. This exact text ships as share/corruption_params.txt;
// a test pins the two copies together.
inline std::string corruption_params_text() {
  return
      "# corruption parameter table v1\n"
      "# name parameter s1 s2 s3 s4 s5\n"
      "gaussian_noise sigma 0.08 0.12 0.18 0.26 0.38\n"
      "shot_noise photons 60 25 12 5 3\n"
      "impulse_noise density 0.03 0.06 0.09 0.17 0.27\n"
      "defocus_blur radius 3 4 6 8 10\n"
      "glass_blur sigma 0.7 0.9 1.0 1.1 1.5\n"
      "glass_blur iterations 1 2 3 4 5\n"
      "motion_blur length 6 9 12 15 20\n"
      "zoom_blur zoom_max 1.11 1.16 1.21 1.26 1.31\n"
      "zoom_blur zoom_step 0.01 0.01 0.02 0.02 0.03\n"
      "snow amount 0.1 0.2 0.3 0.45 0.55\n"
      "frost blend 0.4 0.5 0.6 0.68 0.75\n"
      "fog blend 0.25 0.4 0.5 0.65 0.75\n"
      "brightness shift 0.1 0.2 0.3 0.4 0.5\n"
      "contrast factor 0.75 0.6 0.4 0.25 0.1\n"
      "elastic magnitude 4 7 10 14 20\n"
      "pixelate scale 0.6 0.45 0.3 0.2 0.12\n"
      "jpeg quality 25 18 15 10 7\n";
}

inline real corruption_param(const std::string& name,
                             const std::string& param, int severity) {
  if (severity < 1 || severity > 5)
    throw ConfigError("corruption severity must be in 1..5");
  static const auto table = [] {
    std::map<std::pair<std::string, std::string>, std::array<real, 5>> t;
    std::istringstream is(corruption_params_text());
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string n, p;
      std::array<real, 5> v{};
      ls >> n >> p >> v[0] >> v[1] >> v[2] >> v[3] >> v[4];
      t[{n, p}] = v;
    }
    return t;
  }();
  auto it = table.find({name, param});
  require(it != table.end(),
          "no corruption parameter " + name + "/" + param);
  return it->second[static_cast<size_t>(severity - 1)];
}

namespace detail {

inline void clamp01(Tensor& t) {
  for (real& x : t.data()) x = std::clamp(x, real(0), real(1));
}

inline real sample_plane(const std::vector<real>& p, int64_t h, int64_t w,
                         real y, real x) {
  x = std::clamp(x, real(0), real(w - 1));
  y = std::clamp(y, real(0), real(h - 1));
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const real fx = x - static_cast<real>(x0), fy = y - static_cast<real>(y0);
  return p[y0 * w + x0] * (1 - fx) * (1 - fy) +
         p[y0 * w + x1] * fx * (1 - fy) +
         p[y1 * w + x0] * (1 - fx) * fy + p[y1 * w + x1] * fx * fy;
}

// Direct 2D convolution with border clamping; kernel dims odd.
inline std::vector<real> conv_plane(const std::vector<real>& src, int64_t h,
                                    int64_t w, const std::vector<real>& k,
                                    int64_t kh, int64_t kw) {
  std::vector<real> out(static_cast<size_t>(h * w));
  const int64_t ry = kh / 2, rx = kw / 2;
  for (int64_t v = 0; v < h; ++v)
    for (int64_t u = 0; u < w; ++u) {
      real acc = 0;
      for (int64_t dy = -ry; dy <= ry; ++dy) {
        const int64_t sv = std::clamp(v + dy, int64_t(0), h - 1);
        for (int64_t dx = -rx; dx <= rx; ++dx) {
          const int64_t su = std::clamp(u + dx, int64_t(0), w - 1);
          acc += src[sv * w + su] * k[(dy + ry) * kw + (dx + rx)];
        }
      }
      out[v * w + u] = acc;
    }
  return out;
}

inline std::vector<real> disk_kernel(int64_t radius) {
  const int64_t n = 2 * radius + 1;
  std::vector<real> k(static_cast<size_t>(n * n), 0);
  real sum = 0;
  for (int64_t y = -radius; y <= radius; ++y)
    for (int64_t x = -radius; x <= radius; ++x)
      if (x * x + y * y <= radius * radius) {
        k[(y + radius) * n + (x + radius)] = 1;
        sum += 1;
      }
  for (real& v : k) v /= sum;
  return k;
}

// Line segment of given length and angle splatted bilinearly onto an
// odd-sized grid; used for motion blur and snow streaks.
inline std::vector<real> line_kernel(real length, real angle, int64_t* size) {
  const int64_t n = 2 * static_cast<int64_t>(std::ceil(length / 2)) + 1;
  std::vector<real> k(static_cast<size_t>(n * n), 0);
  const real c = std::cos(angle), s = std::sin(angle);
  const real half = (length - 1) / 2;
  real sum = 0;
  for (real t = -half; t <= half + real(1e-9); t += real(0.5)) {
    const real x = t * c + static_cast<real>(n / 2);
    const real y = t * s + static_cast<real>(n / 2);
    const int64_t x0 = static_cast<int64_t>(std::floor(x));
    const int64_t y0 = static_cast<int64_t>(std::floor(y));
    const real fx = x - static_cast<real>(x0);
    const real fy = y - static_cast<real>(y0);
    auto splat = [&](int64_t yy, int64_t xx, real wgt) {
      if (yy >= 0 && yy < n && xx >= 0 && xx < n) {
        k[yy * n + xx] += wgt;
        sum += wgt;
      }
    };
    splat(y0, x0, (1 - fx) * (1 - fy));
    splat(y0, x0 + 1, fx * (1 - fy));
    splat(y0 + 1, x0, (1 - fx) * fy);
    splat(y0 + 1, x0 + 1, fx * fy);
  }
  for (real& v : k) v /= sum;
  *size = n;
  return k;
}

inline void gaussian_blur_plane(std::vector<real>& p, int64_t h, int64_t w,
                                real sigma) {
  const int64_t r = std::max(int64_t(1),
                             static_cast<int64_t>(std::ceil(3 * sigma)));
  std::vector<real> k(static_cast<size_t>(2 * r + 1));
  real sum = 0;
  for (int64_t i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-real(i * i) / (2 * sigma * sigma));
    sum += k[i + r];
  }
  for (real& v : k) v /= sum;
  std::vector<real> tmp(p.size());
  for (int64_t v = 0; v < h; ++v)
    for (int64_t u = 0; u < w; ++u) {
      real acc = 0;
      for (int64_t i = -r; i <= r; ++i)
        acc += p[v * w + std::clamp(u + i, int64_t(0), w - 1)] * k[i + r];
      tmp[v * w + u] = acc;
    }
  for (int64_t v = 0; v < h; ++v)
    for (int64_t u = 0; u < w; ++u) {
      real acc = 0;
      for (int64_t i = -r; i <= r; ++i)
        acc += tmp[std::clamp(v + i, int64_t(0), h - 1) * w + u] * k[i + r];
      p[v * w + u] = acc;
    }
}

// Midpoint-displacement heightfield on a (2^k+1)^2 grid, normalized to
// [0,1]; the classic cloud/fog generator.
inline std::vector<real> diamond_square(int64_t n, Rng& rng) {
  std::vector<real> f(static_cast<size_t>(n * n), 0);
  auto at = [&](int64_t y, int64_t x) -> real& { return f[y * n + x]; };
  at(0, 0) = real(rng.uniform());
  at(0, n - 1) = real(rng.uniform());
  at(n - 1, 0) = real(rng.uniform());
  at(n - 1, n - 1) = real(rng.uniform());
  real amp = real(0.5);
  for (int64_t step = n - 1; step > 1; step /= 2, amp *= real(0.5)) {
    const int64_t half = step / 2;
    for (int64_t y = half; y < n; y += step)
      for (int64_t x = half; x < n; x += step) {
        const real avg = (at(y - half, x - half) + at(y - half, x + half) +
                          at(y + half, x - half) + at(y + half, x + half)) /
                         4;
        at(y, x) = avg + amp * real(rng.uniform(-1, 1));
      }
    for (int64_t y = 0; y < n; y += half)
      for (int64_t x = (y / half) % 2 == 0 ? half : 0; x < n; x += step) {
        real acc = 0;
        int cnt = 0;
        if (y >= half) { acc += at(y - half, x); ++cnt; }
        if (y + half < n) { acc += at(y + half, x); ++cnt; }
        if (x >= half) { acc += at(y, x - half); ++cnt; }
        if (x + half < n) { acc += at(y, x + half); ++cnt; }
        at(y, x) = acc / cnt + amp * real(rng.uniform(-1, 1));
      }
  }
  const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
  const real span = std::max(real(1e-9), *hi - *lo);
  for (real& v : f) v = (v - *lo) / span;
  return f;
}

// Orthonormal 8x8 DCT-II basis; with a 128 level shift this reproduces the
// coefficient range JPEG quantization tables expect.
inline const std::array<real, 64>& dct8_basis() {
  static const std::array<real, 64> c = [] {
    std::array<real, 64> m{};
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n)
        m[k * 8 + n] = std::sqrt((k == 0 ? real(1) : real(2)) / 8) *
                       std::cos((2 * n + 1) * k * real(M_PI) / 16);
    return m;
  }();
  return c;
}

inline const std::array<int, 64>& jpeg_luminance_table() {
  static const std::array<int, 64> q = {
      16, 11, 10, 16, 24, 40, 51, 61,
      12, 12, 14, 19, 26, 58, 60, 55,
      14, 13, 16, 24, 40, 57, 69, 56,
      14, 17, 22, 29, 51, 87, 80, 62,
      18, 22, 37, 56, 68, 109, 103, 77,
      24, 35, 55, 64, 81, 104, 113, 92,
      49, 64, 78, 87, 103, 121, 120, 101,
      72, 92, 95, 98, 112, 100, 103, 99};
  return q;
}

}  // namespace detail

// Applies one corruption at the given severity. Input (C,H,W) in [0,1];
// output clamped back to [0,1]. Stochastic corruptions are deterministic
// given `seed`; parameter-only ones ignore it.
inline Tensor corrupt(const Tensor& image, const CorruptionSpec& spec,
                      uint64_t seed = 0) {
  require(image.rank() == 3, "corrupt: image must be (C,H,W)");
  const auto& names = corruption_names();
  if (std::find(names.begin(), names.end(), spec.name) == names.end())
    throw ConfigError("unknown corruption '" + spec.name + "'");
  const int64_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const int64_t plane = H * W;
  auto param = [&](const char* p) {
    return corruption_param(spec.name, p, spec.severity);
  };
  Rng rng(seed);
  Tensor out = Tensor::zeros({C, H, W});
  std::copy(image.data().begin(), image.data().end(), out.data().begin());
  auto& d = out.data();

  if (spec.name == "gaussian_noise") {
    const real sigma = param("sigma");
    for (real& x : d) x += sigma * real(rng.normal());
  } else if (spec.name == "shot_noise") {
    const real photons = param("photons");
    for (real& x : d)
      x = real(rng.poisson(double(std::max(real(0), x) * photons))) / photons;
  } else if (spec.name == "impulse_noise") {
    const real density = param("density");
    for (real& x : d)
      if (rng.uniform() < density) x = rng.uniform() < 0.5 ? real(0) : real(1);
  } else if (spec.name == "defocus_blur") {
    const int64_t radius = static_cast<int64_t>(param("radius"));
    std::vector<real> k = detail::disk_kernel(radius);
    const int64_t n = 2 * radius + 1;
    for (int64_t c = 0; c < C; ++c) {
      std::vector<real> src(d.begin() + c * plane,
                            d.begin() + (c + 1) * plane);
      std::vector<real> res = detail::conv_plane(src, H, W, k, n, n);
      std::copy(res.begin(), res.end(), d.begin() + c * plane);
    }
  } else if (spec.name == "glass_blur") {
    const real sigma = param("sigma");
    const int iters = static_cast<int>(param("iterations"));
    for (int it = 0; it < iters; ++it)
      for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u) {
          const int64_t dv = std::lround(rng.normal(0, sigma));
          const int64_t du = std::lround(rng.normal(0, sigma));
          const int64_t v2 = std::clamp(v + dv, int64_t(0), H - 1);
          const int64_t u2 = std::clamp(u + du, int64_t(0), W - 1);
          for (int64_t c = 0; c < C; ++c)
            std::swap(d[c * plane + v * W + u], d[c * plane + v2 * W + u2]);
        }
  } else if (spec.name == "motion_blur") {
    const real length = param("length");
    const real angle = real(rng.uniform(0, M_PI));
    int64_t n = 0;
    std::vector<real> k = detail::line_kernel(length, angle, &n);
    for (int64_t c = 0; c < C; ++c) {
      std::vector<real> src(d.begin() + c * plane,
                            d.begin() + (c + 1) * plane);
      std::vector<real> res = detail::conv_plane(src, H, W, k, n, n);
      std::copy(res.begin(), res.end(), d.begin() + c * plane);
    }
  } else if (spec.name == "zoom_blur") {
    const real zmax = param("zoom_max"), zstep = param("zoom_step");
    const real cy = real(H - 1) / 2, cx = real(W - 1) / 2;
    std::vector<real> acc(static_cast<size_t>(C * plane), 0);
    int64_t count = 0;
    for (real z = 1; z <= zmax + real(1e-9); z += zstep, ++count)
      for (int64_t c = 0; c < C; ++c) {
        std::vector<real> src(image.data().begin() + c * plane,
                              image.data().begin() + (c + 1) * plane);
        for (int64_t v = 0; v < H; ++v)
          for (int64_t u = 0; u < W; ++u)
            acc[c * plane + v * W + u] += detail::sample_plane(
                src, H, W, cy + (real(v) - cy) / z, cx + (real(u) - cx) / z);
      }
    for (int64_t i = 0; i < C * plane; ++i) d[i] = acc[i] / real(count);
  } else if (spec.name == "snow") {
    const real amount = param("amount");
    std::vector<real> field(static_cast<size_t>(plane), 0);
    const int64_t seeds = std::max(
        int64_t(1),
        static_cast<int64_t>(std::lround(real(0.002) * real(plane) *
                                         (1 + 9 * amount))));
    for (int64_t i = 0; i < seeds; ++i)
      field[rng.index(H) * W + rng.index(W)] = 1;
    const real length = 6 + std::round(14 * amount);
    const real angle = real(rng.uniform(M_PI / 3, 2 * M_PI / 3));
    int64_t n = 0;
    std::vector<real> k = detail::line_kernel(length, angle, &n);
    std::vector<real> streak = detail::conv_plane(field, H, W, k, n, n);
    for (real& v : streak) v = std::min(real(1), v * length * real(1.5));
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < plane; ++i) {
        real& x = d[c * plane + i];
        x = x * (1 - real(0.35) * amount) + real(0.2) * amount +
            real(0.8) * streak[i];
      }
  } else if (spec.name == "frost") {
    const real blend = param("blend");
    std::vector<real> f(static_cast<size_t>(plane), 0);
    const real rmin = real(0.08) * std::min(H, W);
    const real rmax = real(0.25) * std::min(H, W);
    for (int b = 0; b < 12; ++b) {
      const real by = real(rng.uniform(0, H - 1));
      const real bx = real(rng.uniform(0, W - 1));
      const real r = real(rng.uniform(rmin, rmax));
      const real amp = real(rng.uniform(0.5, 1.0));
      for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u) {
          const real dy = real(v) - by, dx = real(u) - bx;
          f[v * W + u] += amp * std::exp(-(dx * dx + dy * dy) / (2 * r * r));
        }
    }
    for (int wv = 0; wv < 2; ++wv) {
      const real fr = real(rng.uniform(0.15, 0.5));
      const real th = real(rng.uniform(0, M_PI));
      const real ph = real(rng.uniform(0, 2 * M_PI));
      for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u)
          f[v * W + u] += real(0.3) * std::abs(std::sin(
              fr * (std::cos(th) * u + std::sin(th) * v) + ph));
    }
    const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
    const real span = std::max(real(1e-9), *hi - *lo);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < plane; ++i) {
        const real frost = real(0.55) + real(0.4) * (f[i] - *lo) / span;
        real& x = d[c * plane + i];
        x = (1 - blend) * x + blend * frost;
      }
  } else if (spec.name == "fog") {
    const real blend = param("blend");
    int64_t n = 1;
    while (n + 1 < std::max(H, W) + 1) n *= 2;
    n += 1;
    std::vector<real> field = detail::diamond_square(n, rng);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u) {
          const real wgt = blend * field[v * n + u];
          real& x = d[(c * H + v) * W + u];
          x = x * (1 - wgt) + real(0.95) * wgt;
        }
  } else if (spec.name == "brightness") {
    const real shift = param("shift");
    for (real& x : d) x += shift;
  } else if (spec.name == "contrast") {
    const real factor = param("factor");
    real mean = 0;
    for (real x : d) mean += x;
    mean /= real(d.size());
    for (real& x : d) x = mean + factor * (x - mean);
  } else if (spec.name == "elastic") {
    const real magnitude = param("magnitude");
    std::vector<real> dx(static_cast<size_t>(plane)), dy(dx);
    for (real& v : dx) v = real(rng.uniform(-1, 1));
    for (real& v : dy) v = real(rng.uniform(-1, 1));
    detail::gaussian_blur_plane(dx, H, W, 4);
    detail::gaussian_blur_plane(dy, H, W, 4);
    real peak = 0;
    for (int64_t i = 0; i < plane; ++i)
      peak = std::max({peak, std::abs(dx[i]), std::abs(dy[i])});
    const real scale = peak > 0 ? magnitude / peak : 0;
    for (int64_t c = 0; c < C; ++c) {
      std::vector<real> src(image.data().begin() + c * plane,
                            image.data().begin() + (c + 1) * plane);
      for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u)
          d[c * plane + v * W + u] = detail::sample_plane(
              src, H, W, real(v) + scale * dy[v * W + u],
              real(u) + scale * dx[v * W + u]);
    }
  } else if (spec.name == "pixelate") {
    const real scale = param("scale");
    const int64_t h2 = std::max(int64_t(1),
                                static_cast<int64_t>(std::lround(H * scale)));
    const int64_t w2 = std::max(int64_t(1),
                                static_cast<int64_t>(std::lround(W * scale)));
    for (int64_t c = 0; c < C; ++c)
      for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u) {
          const int64_t sv = std::min(h2 - 1, v * h2 / H);
          const int64_t su = std::min(w2 - 1, u * w2 / W);
          const int64_t ov = std::min(H - 1, sv * H / h2);
          const int64_t ou = std::min(W - 1, su * W / w2);
          d[c * plane + v * W + u] =
              image.data()[c * plane + ov * W + ou];
        }
  } else if (spec.name == "jpeg") {
    const int quality = static_cast<int>(param("quality"));
    const int scale_pct = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<real, 64> qs{};
    for (int i = 0; i < 64; ++i)
      qs[i] = real(std::clamp(
          (detail::jpeg_luminance_table()[i] * scale_pct + 50) / 100, 1,
          255));
    const auto& cm = detail::dct8_basis();
    const int64_t hb = (H + 7) / 8 * 8, wb = (W + 7) / 8 * 8;
    for (int64_t c = 0; c < C; ++c) {
      std::vector<real> padded(static_cast<size_t>(hb * wb));
      for (int64_t v = 0; v < hb; ++v)
        for (int64_t u = 0; u < wb; ++u)
          padded[v * wb + u] =
              d[c * plane + std::min(v, H - 1) * W + std::min(u, W - 1)] *
                  255 -
              128;
      for (int64_t bv = 0; bv < hb; bv += 8)
        for (int64_t bu = 0; bu < wb; bu += 8) {
          real blk[64], tmp[64];
          for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
              blk[i * 8 + j] = padded[(bv + i) * wb + bu + j];
          // coeff = C * blk * C^T, quantize, then invert.
          for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
              real acc = 0;
              for (int t = 0; t < 8; ++t) acc += cm[i * 8 + t] * blk[t * 8 + j];
              tmp[i * 8 + j] = acc;
            }
          for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
              real acc = 0;
              for (int t = 0; t < 8; ++t) acc += tmp[i * 8 + t] * cm[j * 8 + t];
              blk[i * 8 + j] = std::round(acc / qs[i * 8 + j]) * qs[i * 8 + j];
            }
          for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
              real acc = 0;
              for (int t = 0; t < 8; ++t) acc += cm[t * 8 + i] * blk[t * 8 + j];
              tmp[i * 8 + j] = acc;
            }
          for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
              real acc = 0;
              for (int t = 0; t < 8; ++t) acc += tmp[i * 8 + t] * cm[t * 8 + j];
              padded[(bv + i) * wb + bu + j] = acc;
            }
        }
      for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u)
          d[c * plane + v * W + u] = (padded[v * wb + u] + 128) / 255;
    }
  }
  detail::clamp01(out);
  return out;
}

}  // namespace sfmk
