#pragma once

#include "sfmk/tensor.hpp"

namespace sfmk {

// Maps sigmoid disparities in (0,1) onto metric depth in [d_min, d_max]:
// depth = 1 / (a * disp + b) with a = 1/d_min - 1/d_max, b = 1/d_max.
struct DepthRange {
  real d_min = real(0.1);
  real d_max = real(100);

  real a() const { return real(1) / d_min - real(1) / d_max; }
  real b() const { return real(1) / d_max; }

  real depth_of(real disp) const { return real(1) / (a() * disp + b()); }
};

inline Tensor disp_to_depth(const Tensor& disp, const DepthRange& range) {
  return div(Tensor::scalar(1), add(mul(disp, range.a()),
                                    Tensor::scalar(range.b())));
}

}  // namespace sfmk
