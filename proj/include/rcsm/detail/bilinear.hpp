#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "rcsm/types.hpp"

namespace rcsm::detail {

enum class Boundary { zero, clamp, wrap };

/// Four taps of a bilinear read. Taps that fall outside a zero-boundary
/// axis carry weight 0 and index -1.
struct BilinearTaps {
  std::array<Eigen::Index, 4> ix{};
  std::array<Eigen::Index, 4> iy{};
  std::array<double, 4> w{};
};

inline bool resolve_index(Eigen::Index i, Eigen::Index n, Boundary b, Eigen::Index& out) {
  switch (b) {
    case Boundary::zero:
      if (i < 0 || i >= n) return false;
      out = i;
      return true;
    case Boundary::clamp:
      out = i < 0 ? 0 : (i >= n ? n - 1 : i);
      return true;
    case Boundary::wrap:
      out = ((i % n) + n) % n;
      return true;
  }
  return false;
}

inline BilinearTaps bilinear_taps(double fx, double fy, Eigen::Index nx, Eigen::Index ny, Boundary bx,
                                  Boundary by) {
  if (bx == Boundary::clamp) fx = std::clamp(fx, 0.0, static_cast<double>(nx - 1));
  if (by == Boundary::clamp) fy = std::clamp(fy, 0.0, static_cast<double>(ny - 1));
  const double x0f = std::floor(fx);
  const double y0f = std::floor(fy);
  const double ax = fx - x0f;
  const double ay = fy - y0f;
  const auto x0 = static_cast<Eigen::Index>(x0f);
  const auto y0 = static_cast<Eigen::Index>(y0f);
  BilinearTaps t;
  const std::array<double, 4> w = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const std::array<Eigen::Index, 4> dx = {0, 1, 0, 1};
  const std::array<Eigen::Index, 4> dy = {0, 0, 1, 1};
  for (int k = 0; k < 4; ++k) {
    Eigen::Index xi = -1, yi = -1;
    if (w[k] != 0.0 && resolve_index(x0 + dx[k], nx, bx, xi) && resolve_index(y0 + dy[k], ny, by, yi)) {
      t.ix[k] = xi;
      t.iy[k] = yi;
      t.w[k] = w[k];
    } else {
      t.ix[k] = -1;
      t.iy[k] = -1;
      t.w[k] = 0.0;
    }
  }
  return t;
}

/// Generic bilinear warp: `source(ox, oy)` returns the fractional source
/// coordinate of output pixel (ox, oy), or nullopt when the pixel is empty.
template <typename SourceMap>
Image warp_gather(const Image& in, Eigen::Index out_w, Eigen::Index out_h, SourceMap&& source, Boundary bx,
                  Boundary by) {
  Image out = Image::Zero(out_w, out_h);
  for (Eigen::Index oy = 0; oy < out_h; ++oy) {
    for (Eigen::Index ox = 0; ox < out_w; ++ox) {
      const std::optional<Eigen::Vector2d> src = source(ox, oy);
      if (!src) continue;
      const BilinearTaps t = bilinear_taps((*src)(0), (*src)(1), in.rows(), in.cols(), bx, by);
      double v = 0.0;
      for (int k = 0; k < 4; ++k) {
        if (t.w[k] != 0.0) v += t.w[k] * in(t.ix[k], t.iy[k]);
      }
      out(ox, oy) = v;
    }
  }
  return out;
}

/// Adjoint of warp_gather.
template <typename SourceMap>
Image warp_scatter(const Image& grad_out, Eigen::Index in_w, Eigen::Index in_h, SourceMap&& source, Boundary bx,
                   Boundary by) {
  Image grad_in = Image::Zero(in_w, in_h);
  for (Eigen::Index oy = 0; oy < grad_out.cols(); ++oy) {
    for (Eigen::Index ox = 0; ox < grad_out.rows(); ++ox) {
      const double g = grad_out(ox, oy);
      if (g == 0.0) continue;
      const std::optional<Eigen::Vector2d> src = source(ox, oy);
      if (!src) continue;
      const BilinearTaps t = bilinear_taps((*src)(0), (*src)(1), in_w, in_h, bx, by);
      for (int k = 0; k < 4; ++k) {
        if (t.w[k] != 0.0) grad_in(t.ix[k], t.iy[k]) += t.w[k] * g;
      }
    }
  }
  return grad_in;
}

}  // namespace rcsm::detail
