#pragma once

#include <cstdint>
#include <vector>

#include "sfmk/depth_range.hpp"
#include "sfmk/geometry.hpp"
#include "sfmk/tensor.hpp"
#include "sfmk/tensor_ops.hpp"

namespace sfmk {

struct LossConfig {
  real alpha = real(0.85);              // SSIM weight in the photometric mix
  real smoothness_lambda = real(1e-3);  // scale-0 smoothness weight
  DepthRange depth_range;
};

namespace detail {
// Additive penalty that pushes invalid pixels out of every per-pixel minimum;
// large against photometric errors, far from overflow.
constexpr real kInvalidPenalty = real(1e6);
}  // namespace detail

// Windowed structural similarity between two (C,H,W) images, returned as a
// channel-averaged per-pixel map in [-1,1]. Local statistics come from 3x3
// mean pooling normalized by the in-bounds tap count at borders.
inline Tensor ssim(const Tensor& x, const Tensor& y) {
  require(x.shape() == y.shape(), "ssim: shapes differ, " +
          shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  require(x.rank() == 3, "ssim: expected (C,H,W)");
  constexpr real c1 = real(0.01 * 0.01);
  constexpr real c2 = real(0.03 * 0.03);
  auto pool = [](const Tensor& t) { return avg_pool(t, 3, 1, 1, false); };
  Tensor mu_x = pool(x);
  Tensor mu_y = pool(y);
  Tensor sigma_x = sub(pool(mul(x, x)), mul(mu_x, mu_x));
  Tensor sigma_y = sub(pool(mul(y, y)), mul(mu_y, mu_y));
  Tensor sigma_xy = sub(pool(mul(x, y)), mul(mu_x, mu_y));
  Tensor num = mul(add(mul(mul(mu_x, mu_y), real(2)), c1),
                   add(mul(sigma_xy, real(2)), c2));
  Tensor den = mul(add(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1),
                   add(add(sigma_x, sigma_y), c2));
  return reduce_mean(div(num, den), 0);
}

// Per-pixel photometric error: alpha/2 * (1 - SSIM) + (1-alpha) * mean_c|d|.
inline Tensor photometric_error(const Tensor& target, const Tensor& synth,
                                real alpha = real(0.85)) {
  Tensor l1 = reduce_mean(abs(sub(target, synth)), 0);
  Tensor s = ssim(target, synth);
  return add(mul(sub(Tensor::scalar(1), s), alpha / 2),
             mul(l1, real(1) - alpha));
}

struct ReprojectionLoss {
  Tensor loss;                 // scalar
  std::vector<uint8_t> mask;   // H*W auto-mask, 1 = pixel contributes
};

// Per-pixel minimum of the photometric error across warped sources, gated by
// the auto-mask: a pixel contributes only when its best warped error beats
// its best unwarped (identity) error and at least one source sees it. The
// loss is the mask-weighted mean; an all-zero mask yields exactly zero.
inline ReprojectionLoss min_reprojection_with_automask(
    const Tensor& target, const std::vector<Tensor>& synths,
    const std::vector<std::vector<uint8_t>>& valids,
    const std::vector<Tensor>& sources, const LossConfig& cfg = {}) {
  require(!synths.empty(), "min_reprojection: no warped sources");
  require(synths.size() == sources.size() && synths.size() == valids.size(),
          "min_reprojection: synth/source/validity counts differ");
  const int64_t h = target.dim(1), w = target.dim(2);
  const int64_t n = h * w;

  Tensor warped_min;
  for (size_t s = 0; s < synths.size(); ++s) {
    require(static_cast<int64_t>(valids[s].size()) == n,
            "min_reprojection: validity mask has wrong size");
    Tensor pe = photometric_error(target, synths[s], cfg.alpha);
    Tensor penalty = Tensor::zeros({h, w});
    auto& pv = penalty.data();
    for (int64_t i = 0; i < n; ++i)
      if (!valids[s][i]) pv[i] = detail::kInvalidPenalty;
    Tensor gated = add(pe, penalty);
    warped_min = s == 0 ? gated : minimum(warped_min, gated);
  }

  Tensor id_min;
  for (size_t s = 0; s < sources.size(); ++s) {
    Tensor pe = photometric_error(target, sources[s], cfg.alpha);
    id_min = s == 0 ? pe : minimum(id_min, pe);
  }

  ReprojectionLoss out;
  out.mask.assign(static_cast<size_t>(n), 0);
  const auto& wv = warped_min.data();
  const auto& iv = id_min.data();
  int64_t count = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (wv[i] < iv[i]) {
      out.mask[i] = 1;
      ++count;
    }
  }
  if (count == 0) {
    out.loss = Tensor::scalar(0);
    return out;
  }
  Tensor mask_t = Tensor::zeros({h, w});
  auto& mv = mask_t.data();
  for (int64_t i = 0; i < n; ++i) mv[i] = out.mask[i] ? real(1) : real(0);
  out.loss = div(reduce_sum(mul(warped_min, mask_t)),
                 static_cast<real>(count));
  return out;
}

// Edge-aware first-order smoothness of mean-normalized disparity: image
// gradients (channel-averaged, forward differences) downweight disparity
// gradients across intensity edges.
inline Tensor smoothness(const Tensor& disp, const Tensor& image) {
  require(disp.rank() == 2, "smoothness: disparity must be (H,W)");
  require(image.rank() == 3 && image.dim(1) == disp.dim(0) &&
          image.dim(2) == disp.dim(1),
          "smoothness: image " + shape_str(image.shape()) +
          " does not match disparity " + shape_str(disp.shape()));
  const int64_t h = disp.dim(0), w = disp.dim(1);
  Tensor dn = div(disp, add(reduce_mean(disp), real(1e-7)));
  Tensor total = Tensor::scalar(0);
  if (w > 1) {
    Tensor dx = abs(sub(slice(dn, 1, 1, w - 1), slice(dn, 1, 0, w - 1)));
    Tensor ix = reduce_mean(abs(sub(slice(image, 2, 1, w - 1),
                                    slice(image, 2, 0, w - 1))), 0);
    total = add(total, reduce_mean(mul(dx, exp(neg(ix)))));
  }
  if (h > 1) {
    Tensor dy = abs(sub(slice(dn, 0, 1, h - 1), slice(dn, 0, 0, h - 1)));
    Tensor iy = reduce_mean(abs(sub(slice(image, 1, 1, h - 1),
                                    slice(image, 1, 0, h - 1))), 0);
    total = add(total, reduce_mean(mul(dy, exp(neg(iy)))));
  }
  return total;
}

struct TotalLoss {
  Tensor total;                       // scalar, mean over scales
  std::vector<real> per_scale;        // diagnostic values
  std::vector<real> reprojection;     // per-scale reprojection components
};

// Training objective over a disparity pyramid (finest first, scale s at
// H/2^s). Each scale's disparity is upsampled to full resolution before view
// synthesis; smoothness acts on the native-resolution disparity against the
// matching downscaled image, weighted lambda / 2^s.
inline TotalLoss total_loss(const std::vector<Tensor>& disparities,
                            const Tensor& target,
                            const std::vector<Tensor>& sources,
                            const Tensor& k, const std::vector<Tensor>& poses,
                            const LossConfig& cfg = {}) {
  require(!disparities.empty(), "total_loss: empty disparity pyramid");
  require(!sources.empty(), "total_loss: no source frames");
  require(sources.size() == poses.size(),
          "total_loss: pose count does not match source count");
  const int64_t h = target.dim(1), w = target.dim(2);

  std::vector<Tensor> transforms;
  for (const auto& p : poses)
    transforms.push_back(p.rank() == 2 ? p : pose_to_transform(p));

  TotalLoss out;
  Tensor acc = Tensor::scalar(0);
  for (size_t s = 0; s < disparities.size(); ++s) {
    const Tensor& disp = disparities[s];
    require(disp.rank() == 2, "total_loss: disparity must be (H,W)");
    const int64_t hs = disp.dim(0), ws = disp.dim(1);
    require(hs == h >> s && ws == w >> s,
            "total_loss: scale " + std::to_string(s) + " disparity is " +
            shape_str(disp.shape()) + ", expected (" +
            std::to_string(h >> s) + "," + std::to_string(w >> s) + ")");

    Tensor disp_full =
        reshape(bilinear_resize(reshape(disp, {1, hs, ws}), h, w), {h, w});
    Tensor depth = disp_to_depth(disp_full, cfg.depth_range);

    std::vector<Tensor> synths;
    std::vector<std::vector<uint8_t>> valids;
    for (size_t i = 0; i < sources.size(); ++i) {
      SynthResult sr = view_synthesis(sources[i], depth, k, transforms[i]);
      synths.push_back(sr.image);
      valids.push_back(std::move(sr.valid));
    }
    ReprojectionLoss reproj =
        min_reprojection_with_automask(target, synths, valids, sources, cfg);

    Tensor image_s = s == 0 ? target : bilinear_resize(target, hs, ws);
    Tensor smooth = smoothness(disp, image_s);
    const real weight =
        cfg.smoothness_lambda / static_cast<real>(int64_t(1) << s);
    Tensor ls = add(reproj.loss, mul(smooth, weight));

    out.reprojection.push_back(reproj.loss.item());
    out.per_scale.push_back(ls.item());
    acc = add(acc, ls);
  }
  out.total = mul(acc, real(1) / static_cast<real>(disparities.size()));
  return out;
}

}  // namespace sfmk
