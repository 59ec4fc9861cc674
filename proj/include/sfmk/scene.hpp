#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sfmk/dataset.hpp"
#include "sfmk/geometry.hpp"
#include "sfmk/random.hpp"

namespace sfmk {

// Synthetic ground-truth generator: a fronto-parallel textured plane seen
// under known camera motion. Every frame samples one continuous analytic
// texture, so the triplet is photometrically consistent by construction and
// depth, poses, and intrinsics are exact.
struct SceneConfig {
  int64_t height = 64, width = 64;
  uint64_t texture_seed = 1234;
  real plane_depth = 5;
  // Transforms from the target frame to each neighbor. The rotational
  // components make the intrinsics observable: translation alone only
  // constrains products like fx*tx/depth, while yaw pins fx, pitch pins
  // fy, and roll pins the principal point.
  std::array<real, 6> pose_to_prev{real(0.02), real(0.05), real(0.04),
                                   real(0.10), real(0.02), real(0.03)};
  std::array<real, 6> pose_to_next{real(-0.018), real(-0.045), real(-0.035),
                                   real(-0.09), real(-0.018), real(-0.025)};
  real fx = 40, fy = 40, cx = real(31.5), cy = real(31.5);
  // Texture wave frequency band, in cycles per pixel at the target view.
  // Lower frequencies keep bilinear resampling error well below the
  // photometric signal that identifies camera parameters.
  real texture_freq_lo = real(0.2), texture_freq_hi = real(0.7);
  real min_valid_fraction = real(0.8);
};

namespace detail {

// Smooth multi-sine texture over plane coordinates; components drawn once
// per seed. Channel phase offsets decorrelate the three colors.
struct PlaneTexture {
  struct Wave {
    real freq, dir_x, dir_y, amp, phase;
  };
  std::vector<Wave> waves;

  PlaneTexture(uint64_t seed, real freq_lo, real freq_hi) {
    const real two_pi = real(6.283185307179586476925287);
    Rng rng(seed);
    real amp_total = 0;
    for (int i = 0; i < 4; ++i) {
      Wave w;
      w.freq = rng.uniform(freq_lo, freq_hi);
      const real ang = rng.uniform(0, two_pi);
      w.dir_x = std::cos(ang);
      w.dir_y = std::sin(ang);
      w.amp = rng.uniform(real(0.5), real(1.0));
      w.phase = rng.uniform(0, two_pi);
      amp_total += w.amp;
      waves.push_back(w);
    }
    for (Wave& w : waves) w.amp *= real(0.42) / amp_total;
  }

  real at(real x, real y, int ch) const {
    real v = real(0.5);
    for (const Wave& w : waves)
      v += w.amp * std::sin(w.freq * (w.dir_x * x + w.dir_y * y) + w.phase +
                            real(1.1) * ch);
    return v;
  }
};

}  // namespace detail

// Renders the plane as seen from the camera at `transform` (target frame ->
// camera frame). Each pixel's ray is intersected with the plane z = depth in
// target-frame coordinates and colored from the continuous texture.
inline Tensor render_scene_frame(const SceneConfig& cfg,
                                 const detail::PlaneTexture& tex,
                                 const Tensor& transform) {
  const auto& m = transform.data();  // row-major 4x4
  Tensor img = Tensor::zeros({3, cfg.height, cfg.width});
  auto& out = img.data();
  // Texture frequencies are tuned per pixel at the target view; plane
  // coordinates are rescaled so one texture unit is about one pixel.
  const real tex_scale = cfg.fx / cfg.plane_depth;
  for (int64_t v = 0; v < cfg.height; ++v)
    for (int64_t u = 0; u < cfg.width; ++u) {
      // Ray through the pixel in camera coordinates.
      const real dx = (static_cast<real>(u) - cfg.cx) / cfg.fx;
      const real dy = (static_cast<real>(v) - cfg.cy) / cfg.fy;
      // Rotate into target-frame axes: R^T d and R^T t.
      const real rdx = m[0] * dx + m[4] * dy + m[8];
      const real rdy = m[1] * dx + m[5] * dy + m[9];
      const real rdz = m[2] * dx + m[6] * dy + m[10];
      const real rtx = m[0] * m[3] + m[4] * m[7] + m[8] * m[11];
      const real rty = m[1] * m[3] + m[5] * m[7] + m[9] * m[11];
      const real rtz = m[2] * m[3] + m[6] * m[7] + m[10] * m[11];
      require(rdz > real(1e-8), "render_scene_frame: ray parallel to plane");
      const real lambda = (cfg.plane_depth + rtz) / rdz;
      require(lambda > 0, "render_scene_frame: plane behind camera");
      const real px = lambda * rdx - rtx;
      const real py = lambda * rdy - rty;
      for (int ch = 0; ch < 3; ++ch)
        out[(ch * cfg.height + v) * cfg.width + u] =
            tex.at(px * tex_scale, py * tex_scale, ch);
    }
  return img;
}

inline ImageTriplet synth_scene(const SceneConfig& cfg) {
  require(cfg.plane_depth > 0, "synth_scene: plane depth must be positive");
  detail::PlaneTexture tex(cfg.texture_seed, cfg.texture_freq_lo,
                           cfg.texture_freq_hi);
  Tensor k = Tensor::from_data({4}, {cfg.fx, cfg.fy, cfg.cx, cfg.cy});
  Tensor pose_m = Tensor::from_data(
      {6}, std::vector<real>(cfg.pose_to_prev.begin(),
                             cfg.pose_to_prev.end()));
  Tensor pose_p = Tensor::from_data(
      {6}, std::vector<real>(cfg.pose_to_next.begin(),
                             cfg.pose_to_next.end()));
  Tensor identity = pose_to_transform(Tensor::zeros({6}));

  ImageTriplet t;
  t.target = render_scene_frame(cfg, tex, identity);
  t.prev = render_scene_frame(cfg, tex, pose_to_transform(pose_m));
  t.next = render_scene_frame(cfg, tex, pose_to_transform(pose_p));
  t.intrinsics = k;
  t.gt_depth = Tensor::full({cfg.height, cfg.width}, cfg.plane_depth);
  t.pose_to_prev = pose_m;
  t.pose_to_next = pose_p;
  t.id = "synth_" + std::to_string(cfg.texture_seed);

  // The in-frame invariant: with true depth and poses, enough of the target
  // must land inside each neighbor for the objective to see real signal.
  for (const Tensor& pose : {pose_m, pose_p}) {
    FlowField f = warp_coordinates(*t.gt_depth, k, pose_to_transform(pose));
    int64_t valid = 0;
    for (uint8_t ok : f.valid) valid += ok;
    const real frac = static_cast<real>(valid) /
                      static_cast<real>(f.valid.size());
    if (frac < cfg.min_valid_fraction)
      throw ConfigError("synth_scene: camera motion leaves only " +
                        std::to_string(frac) +
                        " of pixels in frame (need " +
                        std::to_string(cfg.min_valid_fraction) + ")");
  }
  return t;
}

// A small dataset of scenes differing only in texture; one item per seed.
inline Dataset make_synth_dataset(const SceneConfig& base, int64_t count) {
  Dataset ds;
  for (int64_t i = 0; i < count; ++i) {
    SceneConfig cfg = base;
    cfg.texture_seed = base.texture_seed + static_cast<uint64_t>(i);
    ds.items.push_back(synth_scene(cfg));
  }
  return ds;
}

}  // namespace sfmk
