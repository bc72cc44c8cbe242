#include "rcsm/correlation.hpp"

#include <cmath>
#include <complex>
#include <vector>

#include "rcsm/detail/fft.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/parallel.hpp"

namespace rcsm {

namespace {

/// value(s) = w0 * corr[i0] + w1 * corr[i0 + 1]
struct ShiftTap {
  int i0{0};
  double w0{1.0};
  double w1{0.0};
};

ShiftTap shift_tap(double shift) {
  const double nearest = std::round(shift);
  if (std::abs(shift - nearest) < 1e-9) return {static_cast<int>(nearest), 1.0, 0.0};
  const double lo = std::floor(shift);
  const double frac = shift - lo;
  return {static_cast<int>(lo), 1.0 - frac, frac};
}

/// Scans resampled to the grid resolution plus the shift bookkeeping shared by
/// the forward, reference and backward passes.
struct Prepared {
  CartesianScan a;
  CartesianScan b;
  std::vector<ShiftTap> tx;
  std::vector<ShiftTap> ty;
  int max_shift_x{0};
  int max_shift_y{0};
  int n0{0};
  int n1{0};
};

double target_resolution(const PoseGrid& grid, double native) {
  const double dx = grid.xs.size() > 1 ? grid.xs[1] - grid.xs[0] : 0.0;
  const double dy = grid.ys.size() > 1 ? grid.ys[1] - grid.ys[0] : 0.0;
  if (dx > 0.0 && dy > 0.0 && std::abs(dx - dy) > 1e-9 * dx) {
    throw ConfigError("correlation requires equal x and y grid resolution");
  }
  if (dx > 0.0) return dx;
  if (dy > 0.0) return dy;
  return native;
}

Prepared prepare(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2) {
  if (s1.width() != s2.width() || s1.height() != s2.height()) {
    throw ShapeError("correlation: scans must have the same shape");
  }
  if (std::abs(s1.meters_per_pixel - s2.meters_per_pixel) > 1e-12 * s1.meters_per_pixel ||
      (s1.center - s2.center).norm() > 1e-9) {
    throw ShapeError("correlation: scans must share resolution and sensor origin");
  }
  if (s1.width() < 2 || s1.height() < 2 || !(s1.meters_per_pixel > 0.0)) {
    throw ShapeError("correlation: scans must be at least 2x2 with positive resolution");
  }
  const double half_x = 0.5 * s1.width() * s1.meters_per_pixel;
  const double half_y = 0.5 * s1.height() * s1.meters_per_pixel;
  if (grid.xs.cwiseAbs().maxCoeff() > half_x + 1e-9 || grid.ys.cwiseAbs().maxCoeff() > half_y + 1e-9) {
    throw ConfigError("correlation: grid translation extent exceeds the scans' half-extent");
  }

  const double res = target_resolution(grid, s1.meters_per_pixel);
  const int w = std::max(2, static_cast<int>(std::lround(s1.width() * s1.meters_per_pixel / res)));
  const int h = std::max(2, static_cast<int>(std::lround(s1.height() * s1.meters_per_pixel / res)));

  Prepared p;
  p.a = resize_bilinear(s1, w, h);
  p.b = resize_bilinear(s2, w, h);
  const double mpp_x = s1.width() * s1.meters_per_pixel / w;
  const double mpp_y = s1.height() * s1.meters_per_pixel / h;
  for (Eigen::Index i = 0; i < grid.xs.size(); ++i) {
    p.tx.push_back(shift_tap(grid.xs[i] / mpp_x));
    p.max_shift_x = std::max({p.max_shift_x, std::abs(p.tx.back().i0), std::abs(p.tx.back().i0 + 1)});
  }
  for (Eigen::Index j = 0; j < grid.ys.size(); ++j) {
    p.ty.push_back(shift_tap(grid.ys[j] / mpp_y));
    p.max_shift_y = std::max({p.max_shift_y, std::abs(p.ty.back().i0), std::abs(p.ty.back().i0 + 1)});
  }
  p.n0 = detail::fft_friendly_size(w + p.max_shift_x + 1);
  p.n1 = detail::fft_friendly_size(h + p.max_shift_y + 1);
  return p;
}

int wrap_index(int i, int n) { return ((i % n) + n) % n; }

/// Reads the circular correlation surface at the grid's shifts.
void sample_surface(const Prepared& p, const Eigen::ArrayXXd& surface, Eigen::Map<Eigen::ArrayXXd> out) {
  for (std::size_t j = 0; j < p.ty.size(); ++j) {
    const ShiftTap& ty = p.ty[j];
    const int y0 = wrap_index(ty.i0, p.n1);
    const int y1 = wrap_index(ty.i0 + 1, p.n1);
    for (std::size_t i = 0; i < p.tx.size(); ++i) {
      const ShiftTap& tx = p.tx[i];
      const int x0 = wrap_index(tx.i0, p.n0);
      const int x1 = wrap_index(tx.i0 + 1, p.n0);
      double v = tx.w0 * ty.w0 * surface(x0, y0);
      if (tx.w1 != 0.0) v += tx.w1 * ty.w0 * surface(x1, y0);
      if (ty.w1 != 0.0) v += tx.w0 * ty.w1 * surface(x0, y1);
      if (tx.w1 != 0.0 && ty.w1 != 0.0) v += tx.w1 * ty.w1 * surface(x1, y1);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
}

/// Adjoint of sample_surface: scatters a slice of dL/dC onto the shift domain.
Eigen::ArrayXXd scatter_surface(const Prepared& p, Eigen::Map<const Eigen::ArrayXXd> upstream) {
  Eigen::ArrayXXd h = Eigen::ArrayXXd::Zero(p.n0, p.n1);
  for (std::size_t j = 0; j < p.ty.size(); ++j) {
    const ShiftTap& ty = p.ty[j];
    const int y0 = wrap_index(ty.i0, p.n1);
    const int y1 = wrap_index(ty.i0 + 1, p.n1);
    for (std::size_t i = 0; i < p.tx.size(); ++i) {
      const double g = upstream(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (g == 0.0) continue;
      const ShiftTap& tx = p.tx[i];
      const int x0 = wrap_index(tx.i0, p.n0);
      const int x1 = wrap_index(tx.i0 + 1, p.n0);
      h(x0, y0) += g * tx.w0 * ty.w0;
      if (tx.w1 != 0.0) h(x1, y0) += g * tx.w1 * ty.w0;
      if (ty.w1 != 0.0) h(x0, y1) += g * tx.w0 * ty.w1;
      if (tx.w1 != 0.0 && ty.w1 != 0.0) h(x1, y1) += g * tx.w1 * ty.w1;
    }
  }
  return h;
}

/// sum_v r[v] * b[v + (sx, sy)] over the overlap.
double direct_correlation(const Image& r, const Image& b, int sx, int sy) {
  const Eigen::Index w = r.rows();
  const Eigen::Index h = r.cols();
  const Eigen::Index x_lo = std::max<Eigen::Index>(0, -sx);
  const Eigen::Index x_hi = std::min<Eigen::Index>(w, w - sx);
  const Eigen::Index y_lo = std::max<Eigen::Index>(0, -sy);
  const Eigen::Index y_hi = std::min<Eigen::Index>(h, h - sy);
  if (x_hi <= x_lo || y_hi <= y_lo) return 0.0;
  return (r.block(x_lo, y_lo, x_hi - x_lo, y_hi - y_lo) * b.block(x_lo + sx, y_lo + sy, x_hi - x_lo, y_hi - y_lo))
      .sum();
}

CorrelationVolume empty_volume(const PoseGrid& grid) {
  return {grid, Volume(grid.nx(), grid.ny(), grid.ntheta())};
}

}  // namespace

CorrelationVolume correlate_fft(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2) {
  const Prepared p = prepare(grid, s1, s2);
  const detail::RealFft2d fft(p.n0, p.n1);
  const detail::Spectrum f2 = fft.forward(p.b.power);
  const double norm = 1.0 / (static_cast<double>(p.n0) * p.n1);

  CorrelationVolume out = empty_volume(grid);
  parallel_for(grid.ntheta(), [&](int k) {
    const Image rotated = rotate_bilinear(p.a.power, grid.thetas[k], p.a.center);
    const detail::Spectrum f1 = fft.forward(rotated);
    const Eigen::ArrayXXd surface = fft.inverse(f1.conjugate() * f2) * norm;
    sample_surface(p, surface, out.scores.slice(k));
  });
  return out;
}

CorrelationVolume correlate_bruteforce(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2) {
  const Prepared p = prepare(grid, s1, s2);
  CorrelationVolume out = empty_volume(grid);
  for (int k = 0; k < grid.ntheta(); ++k) {
    const Image rotated = rotate_bilinear(p.a.power, grid.thetas[k], p.a.center);
    for (int j = 0; j < grid.ny(); ++j) {
      const ShiftTap& ty = p.ty[j];
      for (int i = 0; i < grid.nx(); ++i) {
        const ShiftTap& tx = p.tx[i];
        double v = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
          const double wy = dy == 0 ? ty.w0 : ty.w1;
          for (int dx = 0; dx < 2; ++dx) {
            const double wx = dx == 0 ? tx.w0 : tx.w1;
            if (wx * wy == 0.0) continue;
            v += wx * wy * direct_correlation(rotated, p.b.power, tx.i0 + dx, ty.i0 + dy);
          }
        }
        out.scores(i, j, k) = v;
      }
    }
  }
  return out;
}

CorrelationGradients correlate_backward(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2,
                                        const Volume& upstream) {
  if (upstream.nx() != grid.nx() || upstream.ny() != grid.ny() || upstream.ntheta() != grid.ntheta()) {
    throw ShapeError("correlate_backward: upstream gradient does not match the grid");
  }
  const Prepared p = prepare(grid, s1, s2);
  const Eigen::Index w = p.a.width();
  const Eigen::Index h = p.a.height();
  const detail::RealFft2d fft(p.n0, p.n1);
  const detail::Spectrum f2 = fft.forward(p.b.power);
  const double norm = 1.0 / (static_cast<double>(p.n0) * p.n1);

  std::vector<Image> grad_a(grid.ntheta());
  std::vector<detail::Spectrum> grad_b_spectra(grid.ntheta());
  parallel_for(grid.ntheta(), [&](int k) {
    const auto slice = upstream.slice(k);
    if ((slice == 0.0).all()) return;
    const Image rotated = rotate_bilinear(p.a.power, grid.thetas[k], p.a.center);
    const detail::Spectrum fh = fft.forward(scatter_surface(p, slice));
    const Eigen::ArrayXXd d_rot = fft.inverse(fh.conjugate() * f2) * norm;
    grad_a[k] = rotate_bilinear_backward(d_rot.topLeftCorner(w, h), grid.thetas[k], p.a.center);
    grad_b_spectra[k] = fh * fft.forward(rotated);
  });

  Image da = Image::Zero(w, h);
  detail::Spectrum gb = detail::Spectrum::Zero(p.n0 / 2 + 1, p.n1);
  for (int k = 0; k < grid.ntheta(); ++k) {
    if (grad_a[k].size() == 0) continue;
    da += grad_a[k];
    gb += grad_b_spectra[k];
  }
  const Image db = (fft.inverse(gb) * norm).topLeftCorner(w, h);
  return {resize_bilinear_backward(da, s1.width(), s1.height()), resize_bilinear_backward(db, s2.width(), s2.height())};
}

}  // namespace rcsm
