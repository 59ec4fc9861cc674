#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "sfmk/dataset.hpp"
#include "sfmk/depth_range.hpp"
#include "sfmk/nets.hpp"

namespace sfmk {

// Standard monocular-depth error suite. Error fields are means over valid
// pixels of one image; aggregate reports average them over images.
struct MetricsReport {
  real abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  real delta1 = 0, delta2 = 0, delta3 = 0;
  real silog = 0, sq_err_rel = 0;
  int64_t n_pixels = 0;
};

struct EvalConfig {
  bool scaled = true;       // per-image median alignment to ground truth
  real cap = 80;            // max evaluated depth; gt beyond it is ignored
  real floor = real(1e-3);  // predictions clamp to [floor, cap]
  bool eigen_crop = false;  // conventional test-time crop, off by default
};

namespace detail {

inline real median_of(std::vector<real> v) {
  require(!v.empty(), "median: empty input");
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  real hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  real lo = *std::max_element(v.begin(), v.begin() + mid);
  return (lo + hi) / 2;
}

// Fractions of the conventional KITTI evaluation crop (relative to image
// size so it survives resizing).
inline bool in_eigen_crop(int64_t v, int64_t u, int64_t h, int64_t w) {
  const real top = real(0.40810811) * h, bot = real(0.99189189) * h;
  const real left = real(0.03594771) * w, right = real(0.96405229) * w;
  return v >= top && v < bot && u >= left && u < right;
}

}  // namespace detail

// Rescales pred so its median matches the ground-truth median over valid
// (gt > 0) pixels.
inline Tensor median_scale(const Tensor& pred, const Tensor& gt) {
  require(pred.rank() == 2 && gt.rank() == 2 && pred.dim(0) == gt.dim(0) &&
          pred.dim(1) == gt.dim(1), "median_scale: shape mismatch");
  std::vector<real> pv, gv;
  for (int64_t i = 0; i < gt.size(); ++i)
    if (gt.data()[i] > 0) {
      gv.push_back(gt.data()[i]);
      pv.push_back(pred.data()[i]);
    }
  if (gv.empty())
    throw NumericError("median_scale: no valid ground-truth pixels");
  const real ratio = detail::median_of(gv) / detail::median_of(pv);
  return mul(pred, ratio);
}

inline MetricsReport depth_metrics(const Tensor& pred, const Tensor& gt,
                                   const EvalConfig& cfg = {}) {
  require(pred.rank() == 2 && gt.rank() == 2 && pred.dim(0) == gt.dim(0) &&
          pred.dim(1) == gt.dim(1), "depth_metrics: shape mismatch");
  const int64_t h = gt.dim(0), w = gt.dim(1);
  real s_abs = 0, s_sq = 0, s_se = 0, s_sle = 0, s_e = 0, s_e2 = 0;
  real s_rel2 = 0;
  int64_t n = 0, n1 = 0, n2 = 0, n3 = 0;
  for (int64_t v = 0; v < h; ++v)
    for (int64_t u = 0; u < w; ++u) {
      const real g = gt.data()[v * w + u];
      if (!(g > 0 && g <= cfg.cap)) continue;
      if (cfg.eigen_crop && !detail::in_eigen_crop(v, u, h, w)) continue;
      const real p = std::clamp(pred.data()[v * w + u], cfg.floor, cfg.cap);
      const real d = p - g;
      const real le = std::log(p) - std::log(g);
      const real ratio = std::max(p / g, g / p);
      s_abs += std::abs(d) / g;
      s_sq += d * d / g;
      s_se += d * d;
      s_sle += le * le;
      s_e += le;
      s_e2 += le * le;
      s_rel2 += d * d / (g * g);
      n1 += ratio < real(1.25);
      n2 += ratio < real(1.25) * real(1.25);
      n3 += ratio < real(1.25) * real(1.25) * real(1.25);
      ++n;
    }
  if (n == 0) throw NumericError("depth_metrics: empty valid mask");
  MetricsReport r;
  const real rn = static_cast<real>(n);
  r.abs_rel = s_abs / rn;
  r.sq_rel = s_sq / rn;
  r.rmse = std::sqrt(s_se / rn);
  r.rmse_log = std::sqrt(s_sle / rn);
  r.delta1 = static_cast<real>(n1) / rn;
  r.delta2 = static_cast<real>(n2) / rn;
  r.delta3 = static_cast<real>(n3) / rn;
  r.silog = std::sqrt(std::max(real(0), s_e2 / rn - (s_e / rn) * (s_e / rn)))
            * 100;
  r.sq_err_rel = 100 * s_rel2 / rn;
  r.n_pixels = n;
  return r;
}

// Full-resolution depth prediction for one image, evaluation mode.
inline Tensor predict_depth(ModelBundle& model, const Tensor& image,
                            const DepthRange& range = {}) {
  std::vector<Tensor> disps = model.disparities(image, false);
  return disp_to_depth(disps[0], range);
}

inline MetricsReport aggregate_reports(const std::vector<MetricsReport>& rs) {
  require(!rs.empty(), "aggregate_reports: no reports");
  MetricsReport m;
  for (const MetricsReport& r : rs) {
    m.abs_rel += r.abs_rel;
    m.sq_rel += r.sq_rel;
    m.rmse += r.rmse;
    m.rmse_log += r.rmse_log;
    m.delta1 += r.delta1;
    m.delta2 += r.delta2;
    m.delta3 += r.delta3;
    m.silog += r.silog;
    m.sq_err_rel += r.sq_err_rel;
    m.n_pixels += r.n_pixels;
  }
  const real k = static_cast<real>(rs.size());
  m.abs_rel /= k;
  m.sq_rel /= k;
  m.rmse /= k;
  m.rmse_log /= k;
  m.delta1 /= k;
  m.delta2 /= k;
  m.delta3 /= k;
  m.silog /= k;
  m.sq_err_rel /= k;
  return m;
}

// Evaluates the model's full-resolution predictions against ground truth,
// per-image, then averages. Every item must carry gt depth.
inline MetricsReport evaluate(ModelBundle& model, const Dataset& ds,
                              const EvalConfig& cfg = {},
                              const DepthRange& range = {}) {
  require(!ds.items.empty(), "evaluate: empty dataset");
  std::vector<MetricsReport> per_image;
  for (const ImageTriplet& item : ds.items) {
    if (!item.gt_depth)
      throw ConfigError("evaluate: item '" + item.id +
                        "' has no ground-truth depth");
    Tensor pred = predict_depth(model, item.target, range);
    if (cfg.scaled) pred = median_scale(pred, *item.gt_depth);
    per_image.push_back(depth_metrics(pred, *item.gt_depth, cfg));
  }
  return aggregate_reports(per_image);
}

inline std::string metrics_csv_header() {
  return "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,silog,"
         "sq_err_rel,n_pixels";
}

inline std::string metrics_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.abs_rel << ',' << r.sq_rel << ','
     << r.rmse << ',' << r.rmse_log << ',' << r.delta1 << ',' << r.delta2
     << ',' << r.delta3 << ',' << r.silog << ',' << r.sq_err_rel << ','
     << r.n_pixels;
  return os.str();
}

inline std::string metrics_table(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "  abs_rel    " << r.abs_rel << "\n"
     << "  sq_rel     " << r.sq_rel << "\n"
     << "  rmse       " << r.rmse << "\n"
     << "  rmse_log   " << r.rmse_log << "\n"
     << "  delta<1.25 " << r.delta1 << "\n"
     << "  delta<1.25^2 " << r.delta2 << "\n"
     << "  delta<1.25^3 " << r.delta3 << "\n"
     << "  silog      " << r.silog << "\n"
     << "  sq_err_rel " << r.sq_err_rel << "\n"
     << "  n_pixels   " << r.n_pixels << "\n";
  return os.str();
}

}  // namespace sfmk
