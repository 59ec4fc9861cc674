#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sfmk/tensor.hpp"
#include "sfmk/tensor_ops.hpp"

namespace sfmk {

// Pixel (i,j) carries continuous coordinates x = j, y = i; integer coords sit
// on pixel centers with no half-pixel offset. Camera frames are right-handed,
// column-vector convention, z pointing forward.

constexpr real kMinProjectionZ = real(1e-8);
constexpr real kRodriguesTaylorNormSq = real(1e-14);
// Slack on the in-frame test so border pixels that land on the frame edge up
// to rounding stay valid (identity warps reproduce x=0 as -1e-16).
constexpr real kBoundsEps = real(1e-6);

// Plain pinhole intrinsics for untaped plumbing (datasets, scenes).
struct Intrinsics {
  real fx = 1, fy = 1, cx = 0, cy = 0;

  Intrinsics() = default;
  Intrinsics(real fx_, real fy_, real cx_, real cy_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {}

  // Rescale for an image resized by (sx, sy) = (W_new/W_old, H_new/H_old).
  Intrinsics scaled(real sx, real sy) const {
    return {fx * sx, fy * sy, cx * sx, cy * sy};
  }

  Tensor to_tensor(bool requires_grad = false) const {
    return Tensor::from_data({4}, {fx, fy, cx, cy}, requires_grad);
  }

  static Intrinsics from_tensor(const Tensor& k) {
    require(k.size() == 4, "Intrinsics: expected 4 values (fx,fy,cx,cy)");
    return {k[0], k[1], k[2], k[3]};
  }
};

namespace detail {

inline Tensor scalar_at(const Tensor& v, int64_t i) {
  return slice(v, 0, i, 1);
}

inline Tensor mat3(std::vector<Tensor> cells) {
  return reshape(concat(cells, 0), {3, 3});
}

}  // namespace detail

// K = [[fx,0,cx],[0,fy,cy],[0,0,1]] from a 4-vector (fx,fy,cx,cy).
inline Tensor intrinsics_matrix(const Tensor& k) {
  require(k.size() == 4, "intrinsics_matrix: expected 4 values");
  Tensor kf = reshape(k, {4});
  Tensor fx = detail::scalar_at(kf, 0), fy = detail::scalar_at(kf, 1);
  Tensor cx = detail::scalar_at(kf, 2), cy = detail::scalar_at(kf, 3);
  Tensor zero = Tensor::scalar(0), one = Tensor::scalar(1);
  return detail::mat3({fx, zero, cx, zero, fy, cy, zero, zero, one});
}

// Intrinsics after resampling the image by (sx, sy): focal lengths and
// principal point scale with their axes.
inline Tensor rescale_intrinsics(const Tensor& k, real sx, real sy) {
  require(k.size() == 4, "rescale_intrinsics: expected 4 values");
  const auto& v = k.data();
  return Tensor::from_data({4}, {v[0] * sx, v[1] * sy, v[2] * sx,
                                 v[3] * sy});
}

// Closed-form K^-1 so the inverse stays differentiable in (fx,fy,cx,cy).
inline Tensor intrinsics_inverse_matrix(const Tensor& k) {
  require(k.size() == 4, "intrinsics_inverse_matrix: expected 4 values");
  Tensor kf = reshape(k, {4});
  Tensor fx = detail::scalar_at(kf, 0), fy = detail::scalar_at(kf, 1);
  Tensor cx = detail::scalar_at(kf, 2), cy = detail::scalar_at(kf, 3);
  Tensor zero = Tensor::scalar(0), one = Tensor::scalar(1);
  Tensor ifx = div(one, fx), ify = div(one, fy);
  return detail::mat3({ifx, zero, neg(mul(cx, ifx)),
                       zero, ify, neg(mul(cy, ify)),
                       zero, zero, one});
}

// Axis-angle + translation (rx,ry,rz,tx,ty,tz) -> homogeneous 4x4 transform
// taking target-frame points into the source frame. Rodrigues rotation with a
// second-order Taylor fallback near zero angle.
inline Tensor pose_to_transform(const Tensor& pose) {
  require(pose.size() == 6, "pose_to_transform: expected 6 values, got shape " +
          shape_str(pose.shape()));
  Tensor p = reshape(pose, {6});
  Tensor rx = detail::scalar_at(p, 0), ry = detail::scalar_at(p, 1),
         rz = detail::scalar_at(p, 2);
  Tensor zero = Tensor::scalar(0), one = Tensor::scalar(1);

  Tensor theta_sq = add(add(mul(rx, rx), mul(ry, ry)), mul(rz, rz));
  Tensor s, c;  // sin(t)/t and (1-cos(t))/t^2
  if (theta_sq.item() < kRodriguesTaylorNormSq) {
    s = one;
    c = Tensor::scalar(real(0.5));
  } else {
    Tensor theta = sqrt(theta_sq);
    s = div(sin(theta), theta);
    c = div(sub(one, cos(theta)), theta_sq);
  }

  Tensor cross = detail::mat3({zero, neg(rz), ry,
                               rz, zero, neg(rx),
                               neg(ry), rx, zero});
  // r r^T - theta^2 I equals cross(r)^2; build it directly from components.
  Tensor cross_sq = detail::mat3(
      {sub(mul(rx, rx), theta_sq), mul(rx, ry), mul(rx, rz),
       mul(rx, ry), sub(mul(ry, ry), theta_sq), mul(ry, rz),
       mul(rx, rz), mul(ry, rz), sub(mul(rz, rz), theta_sq)});
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor rmat = add(eye, add(mul(cross, s), mul(cross_sq, c)));

  Tensor trans = slice(p, 0, 3, 3);
  Tensor top = concat({rmat, reshape(trans, {3, 1})}, 1);
  Tensor bottom = Tensor::from_data({1, 4}, {0, 0, 0, 1});
  return concat({top, bottom}, 0);
}

// Constant homogeneous pixel grid (3, H*W): rows x, y, 1 in row-major pixel
// order.
inline Tensor pixel_grid(int64_t h, int64_t w) {
  Tensor g = Tensor::zeros({3, h * w});
  auto& v = g.data();
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      v[i * w + j] = static_cast<real>(j);
      v[h * w + i * w + j] = static_cast<real>(i);
      v[2 * h * w + i * w + j] = real(1);
    }
  return g;
}

// Perspective division (3,N) -> (2,N). Entries with z below the threshold are
// flagged invalid, produce a finite placeholder, and pass no gradient.
inline std::pair<Tensor, std::vector<uint8_t>> dehomogenize(const Tensor& h) {
  require(h.rank() == 2 && h.dim(0) == 3, "dehomogenize: expected (3,N)");
  const int64_t n = h.dim(1);
  auto out = detail::make_node(Shape{2, n});
  std::vector<uint8_t> valid(static_cast<size_t>(n));
  const auto& hv = h.data();
  for (int64_t i = 0; i < n; ++i) {
    const real z = hv[2 * n + i];
    const bool ok = z >= kMinProjectionZ;
    valid[i] = ok ? 1 : 0;
    const real zs = ok ? z : real(1);
    out->value[i] = hv[i] / zs;
    out->value[n + i] = hv[n + i] / zs;
  }
  Tensor coords = detail::finish(
      "dehomogenize", out, {h.node()},
      [self = out.get(), hn = h.node(), n, valid] {
        const real* g = self->grad.data();
        const real* hv = hn->value.data();
        real* gh = hn->grad_data();
        for (int64_t i = 0; i < n; ++i) {
          if (!valid[i]) continue;
          const real z = hv[2 * n + i];
          const real gx = g[i], gy = g[n + i];
          gh[i] += gx / z;
          gh[n + i] += gy / z;
          gh[2 * n + i] -= (gx * hv[i] + gy * hv[n + i]) / (z * z);
        }
      });
  return {coords, std::move(valid)};
}

// Camera-frame points (3, H*W) for every pixel of a depth map.
inline Tensor backproject(const Tensor& depth, const Tensor& k) {
  require(depth.rank() == 2, "backproject: depth must be (H,W)");
  const int64_t hgt = depth.dim(0), wid = depth.dim(1);
  Tensor rays = matmul(intrinsics_inverse_matrix(k), pixel_grid(hgt, wid));
  return colwise_scale(rays, reshape(depth, {hgt * wid}));
}

// Pinhole projection of (3,N) camera points to pixel coordinates (2,N).
inline std::pair<Tensor, std::vector<uint8_t>> project(const Tensor& points,
                                                       const Tensor& k) {
  require(points.rank() == 2 && points.dim(0) == 3, "project: expected (3,N)");
  return dehomogenize(matmul(intrinsics_matrix(k), points));
}

struct FlowField {
  Tensor coords;                // (H,W,2), last axis (x,y)
  std::vector<uint8_t> valid;   // H*W, row-major
};

// Correspondence field of Eq-style rigid reprojection: backproject target
// pixels with their depth, move them by `transform` (target -> source), and
// project with the source intrinsics. Pixels projecting outside
// [0,W-1]x[0,H-1] or with non-positive (or tiny) z are flagged invalid.
inline FlowField warp_coordinates(const Tensor& depth, const Tensor& k_target,
                                  const Tensor& k_source,
                                  const Tensor& transform) {
  require(depth.rank() == 2, "warp_coordinates: depth must be (H,W)");
  require(transform.rank() == 2 && transform.dim(0) == 4 &&
          transform.dim(1) == 4, "warp_coordinates: transform must be (4,4)");
  const int64_t hgt = depth.dim(0), wid = depth.dim(1);
  const int64_t n = hgt * wid;

  Tensor cam = backproject(depth, k_target);
  Tensor rot = slice(slice(transform, 0, 0, 3), 1, 0, 3);
  Tensor trans = reshape(slice(slice(transform, 0, 0, 3), 1, 3, 1), {3});
  Tensor moved = add_rowvec(matmul(rot, cam), trans);
  auto [coords2n, valid] = dehomogenize(matmul(intrinsics_matrix(k_source),
                                               moved));
  const auto& cv = coords2n.data();
  for (int64_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    const real x = cv[i], y = cv[n + i];
    if (!(x >= -kBoundsEps && x <= static_cast<real>(wid - 1) + kBoundsEps &&
          y >= -kBoundsEps && y <= static_cast<real>(hgt - 1) + kBoundsEps))
      valid[i] = 0;
  }
  FlowField f;
  f.coords = reshape(transpose(coords2n), {hgt, wid, 2});
  f.valid = std::move(valid);
  return f;
}

inline FlowField warp_coordinates(const Tensor& depth, const Tensor& k,
                                  const Tensor& transform) {
  return warp_coordinates(depth, k, k, transform);
}

// Samples image (C,H,W) at continuous coords (Ho,Wo,2); out-of-range
// coordinates clamp to the border (and contribute no coordinate gradient
// there).
inline Tensor bilinear_sample(const Tensor& image, const Tensor& coords) {
  require(image.rank() == 3, "bilinear_sample: image must be (C,H,W)");
  require(coords.rank() == 3 && coords.dim(2) == 2,
          "bilinear_sample: coords must be (H,W,2), got " +
          shape_str(coords.shape()));
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t ho = coords.dim(0), wo = coords.dim(1);
  const int64_t n = ho * wo;
  auto out = detail::make_node(Shape{c, ho, wo});
  const auto& iv = image.data();
  const auto& cv = coords.data();
  for (int64_t i = 0; i < n; ++i) {
    const real x = std::min(std::max(cv[2 * i], real(0)),
                            static_cast<real>(w - 1));
    const real y = std::min(std::max(cv[2 * i + 1], real(0)),
                            static_cast<real>(h - 1));
    const int64_t x0 = std::min(static_cast<int64_t>(x), w - 1);
    const int64_t y0 = std::min(static_cast<int64_t>(y), h - 1);
    const int64_t x1 = std::min(x0 + 1, w - 1);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const real fx = x - static_cast<real>(x0);
    const real fy = y - static_cast<real>(y0);
    for (int64_t ch = 0; ch < c; ++ch) {
      const real* plane = iv.data() + ch * h * w;
      const real v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
      const real v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
      out->value[ch * n + i] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                               fy * ((1 - fx) * v10 + fx * v11);
    }
  }
  return detail::finish("bilinear_sample", out,
                        {image.node(), coords.node()},
                        [self = out.get(), in = image.node(),
                         cn = coords.node(), c, h, w, n] {
    const real* g = self->grad.data();
    const real* iv = in->value.data();
    const real* cv = cn->value.data();
    real* gi = in->requires_grad ? in->grad_data() : nullptr;
    real* gc = cn->requires_grad ? cn->grad_data() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      const real xr = cv[2 * i], yr = cv[2 * i + 1];
      const real x = std::min(std::max(xr, real(0)), static_cast<real>(w - 1));
      const real y = std::min(std::max(yr, real(0)), static_cast<real>(h - 1));
      const int64_t x0 = std::min(static_cast<int64_t>(x), w - 1);
      const int64_t y0 = std::min(static_cast<int64_t>(y), h - 1);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const int64_t y1 = std::min(y0 + 1, h - 1);
      const real fx = x - static_cast<real>(x0);
      const real fy = y - static_cast<real>(y0);
      const bool x_interior = (xr > 0) && (xr < static_cast<real>(w - 1));
      const bool y_interior = (yr > 0) && (yr < static_cast<real>(h - 1));
      real dx = 0, dy = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const real gv = g[ch * n + i];
        if (gv == real(0) && gc == nullptr) continue;
        const real* plane = iv + ch * h * w;
        const real v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
        const real v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
        if (gi) {
          real* gplane = gi + ch * h * w;
          gplane[y0 * w + x0] += gv * (1 - fy) * (1 - fx);
          gplane[y0 * w + x1] += gv * (1 - fy) * fx;
          gplane[y1 * w + x0] += gv * fy * (1 - fx);
          gplane[y1 * w + x1] += gv * fy * fx;
        }
        dx += gv * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
        dy += gv * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
      }
      if (gc) {
        if (x_interior) gc[2 * i] += dx;
        if (y_interior) gc[2 * i + 1] += dy;
      }
    }
  });
}

struct SynthResult {
  Tensor image;                // (C,H,W)
  std::vector<uint8_t> valid;  // H*W
};

// Differentiable novel-view synthesis: warp the source frame into the target
// camera using the target depth and the target->source transform.
inline SynthResult view_synthesis(const Tensor& source, const Tensor& depth,
                                  const Tensor& k, const Tensor& pose) {
  require(source.rank() == 3, "view_synthesis: source must be (C,H,W)");
  require(depth.rank() == 2 && depth.dim(0) == source.dim(1) &&
          depth.dim(1) == source.dim(2),
          "view_synthesis: depth " + shape_str(depth.shape()) +
          " does not match source " + shape_str(source.shape()));
  Tensor transform =
      (pose.rank() == 2) ? pose : pose_to_transform(pose);
  FlowField flow = warp_coordinates(depth, k, k, transform);
  SynthResult r;
  r.image = bilinear_sample(source, flow.coords);
  r.valid = std::move(flow.valid);
  return r;
}

}  // namespace sfmk
