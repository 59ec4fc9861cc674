#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sfmk/geometry.hpp"
#include "sfmk/image_io.hpp"
#include "sfmk/tensor.hpp"
#include "sfmk/tensor_ops.hpp"

namespace sfmk {

// Three temporally consecutive frames around a target, with whatever ground
// truth the source can provide.
struct ImageTriplet {
  Tensor prev, target, next;            // (3,H,W) in [0,1]
  Tensor intrinsics;                    // (4): fx, fy, cx, cy at frame size
  std::optional<Tensor> gt_depth;       // (H,W); 0 marks missing pixels
  std::optional<Tensor> pose_to_prev;   // (6): transform target -> prev
  std::optional<Tensor> pose_to_next;   // (6): transform target -> next
  std::string id;                       // stable identifier for reports
};

struct Dataset {
  std::vector<ImageTriplet> items;
};

namespace detail {

inline Tensor resize_image(const Tensor& img, int64_t h, int64_t w) {
  if (img.dim(1) == h && img.dim(2) == w) return img;
  return bilinear_resize(img, h, w);
}

// Nearest-neighbor for sparse depth: interpolation would invent
// measurements between valid and empty pixels.
inline Tensor resize_depth_nearest(const Tensor& d, int64_t h, int64_t w) {
  if (d.dim(0) == h && d.dim(1) == w) return d;
  Tensor out = Tensor::zeros({h, w});
  const int64_t h0 = d.dim(0), w0 = d.dim(1);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      const int64_t si = std::min(h0 - 1, i * h0 / h);
      const int64_t sj = std::min(w0 - 1, j * w0 / w);
      out.data()[i * w + j] = d.data()[si * w0 + sj];
    }
  return out;
}

inline Tensor read_image_any(const std::string& stem) {
  namespace fs = std::filesystem;
  if (fs::exists(stem + ".png")) return read_png(stem + ".png");
  if (fs::exists(stem + ".ppm")) return read_ppm(stem + ".ppm");
  throw IoError("no image at " + stem + ".{png,ppm}");
}

inline bool frame_exists(const std::string& stem) {
  namespace fs = std::filesystem;
  return fs::exists(stem + ".png") || fs::exists(stem + ".ppm");
}

// calib_cam_to_cam.txt carries "P_rect_02:" followed by a row-major 3x4
// projection; fx, cx, fy, cy sit at positions 0, 2, 5, 6.
inline Tensor parse_kitti_intrinsics(const std::string& calib_path) {
  std::ifstream is(calib_path);
  io_require(static_cast<bool>(is), "cannot open calibration " + calib_path);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("P_rect_02:", 0) != 0) continue;
    std::istringstream ls(line.substr(10));
    std::vector<real> v;
    real x;
    while (ls >> x) v.push_back(x);
    io_require(v.size() == 12,
               "malformed P_rect_02 in " + calib_path + ": expected 12 "
               "numbers, got " + std::to_string(v.size()));
    return Tensor::from_data({4}, {v[0], v[5], v[2], v[6]});
  }
  throw IoError("no P_rect_02 line in " + calib_path);
}

}  // namespace detail

// KITTI directory layout:
//   root/<date>/<drive>/image_02/data/<frame>.png
//   root/<date>/calib_cam_to_cam.txt
//   root/<date>/<drive>/proj_depth/groundtruth/image_02/<frame>.png (optional)
// The split file lists "<date>/<drive> <frame>" per line ("l" side suffix
// accepted); a frame becomes a target only when both temporal neighbors
// exist and it is not in the exclusion list (static frames).
inline Dataset load_kitti_layout(const std::string& root,
                                 const std::string& split_file,
                                 int64_t target_h, int64_t target_w,
                                 const std::string& exclusion_file = "",
                                 std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  auto read_list = [](const std::string& path) {
    std::vector<std::pair<std::string, std::string>> out;
    std::ifstream is(path);
    detail::io_require(static_cast<bool>(is), "cannot open split " + path);
    std::string line;
    while (std::getline(is, line)) {
      std::istringstream ls(line);
      std::string drive, frame, side;
      if (!(ls >> drive >> frame)) continue;
      if (ls >> side && side == "r") continue;  // only the left camera
      out.emplace_back(drive, frame);
    }
    return out;
  };
  std::set<std::string> excluded;
  if (!exclusion_file.empty())
    for (const auto& [drive, frame] : read_list(exclusion_file))
      excluded.insert(drive + " " + frame);

  Dataset ds;
  std::map<std::string, Tensor> calib_cache;
  for (const auto& [drive, frame] : read_list(split_file)) {
    if (excluded.count(drive + " " + frame)) continue;
    const std::string date = drive.substr(0, drive.find('/'));
    const std::string dir = root + "/" + drive + "/image_02/data/";
    const int64_t t = std::stoll(frame);
    auto pad = [](int64_t idx, size_t width) {
      std::string s = std::to_string(idx);
      return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
    };
    // Frames on disk are canonically 10-digit zero-padded; accept shorter
    // split tokens by canonicalizing to whichever form exists.
    std::string stem = frame;
    if (!detail::frame_exists(dir + stem) &&
        detail::frame_exists(dir + pad(t, 10)))
      stem = pad(t, 10);
    const size_t width = stem.size();
    const std::string prev_stem = dir + pad(t - 1, width);
    const std::string next_stem = dir + pad(t + 1, width);
    if (t == 0 || !detail::frame_exists(prev_stem) ||
        !detail::frame_exists(next_stem)) {
      if (log)
        *log << "skipping " << drive << " " << frame
             << ": missing temporal neighbor\n";
      continue;
    }
    if (!calib_cache.count(date))
      calib_cache.emplace(date, detail::parse_kitti_intrinsics(
                                    root + "/" + date +
                                    "/calib_cam_to_cam.txt"));
    ImageTriplet item;
    Tensor raw = detail::read_image_any(dir + stem);
    const real sx = static_cast<real>(target_w) /
                    static_cast<real>(raw.dim(2));
    const real sy = static_cast<real>(target_h) /
                    static_cast<real>(raw.dim(1));
    item.target = detail::resize_image(raw, target_h, target_w);
    item.prev = detail::resize_image(detail::read_image_any(prev_stem),
                                     target_h, target_w);
    item.next = detail::resize_image(detail::read_image_any(next_stem),
                                     target_h, target_w);
    item.intrinsics = rescale_intrinsics(calib_cache.at(date), sx, sy);
    item.id = drive + " " + frame;
    const std::string depth_path = root + "/" + drive +
                                   "/proj_depth/groundtruth/image_02/" +
                                   stem + ".png";
    if (fs::exists(depth_path))
      item.gt_depth = detail::resize_depth_nearest(read_depth_png(depth_path),
                                                   target_h, target_w);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace sfmk
