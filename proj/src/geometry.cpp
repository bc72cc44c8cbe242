#include "rcsm/geometry.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include "rcsm/detail/bilinear.hpp"
#include "rcsm/errors.hpp"

namespace rcsm {

using detail::Boundary;

namespace {

constexpr double kSnapTolerance = 1e-9;

Eigen::VectorXd snapped_axis(const Interval& iv, double delta, const char* axis) {
  const auto k_lo = static_cast<long>(std::ceil(iv.min / delta - kSnapTolerance));
  const auto k_hi = static_cast<long>(std::floor(iv.max / delta + kSnapTolerance));
  const long n = k_hi - k_lo + 1;
  if (n < 2) {
    std::ostringstream msg;
    msg << "pose grid axis '" << axis << "' has " << std::max(n, 0L) << " sample(s); at least 2 required";
    throw ConfigError(msg.str());
  }
  Eigen::VectorXd v(n);
  for (long k = 0; k < n; ++k) v[k] = static_cast<double>(k_lo + k) * delta;
  return v;
}

bool all_in_unit_range(const Image& img) {
  return img.allFinite() && (img.size() == 0 || (img.minCoeff() >= 0.0 && img.maxCoeff() <= 1.0));
}

}  // namespace

void SearchRegion::validate() const {
  auto check = [](const Interval& iv, const char* axis) {
    if (!(std::isfinite(iv.min) && std::isfinite(iv.max)) || !(iv.min < iv.max)) {
      throw ConfigError(std::string("search region: ") + axis + " requires min < max");
    }
    if (iv.min > 0.0 || iv.max < 0.0) {
      throw ConfigError(std::string("search region: ") + axis + " range must contain 0");
    }
  };
  check(x, "x");
  check(y, "y");
  check(theta, "theta");
}

void GridResolution::validate() const {
  if (!(delta_x > 0.0 && delta_y > 0.0 && delta_theta > 0.0) ||
      !(std::isfinite(delta_x) && std::isfinite(delta_y) && std::isfinite(delta_theta))) {
    throw ConfigError("grid resolution: every delta must be strictly positive");
  }
}

PoseGrid PoseGrid::from_axes(Eigen::VectorXd xs, Eigen::VectorXd ys, Eigen::VectorXd thetas) {
  if (xs.size() == 0 || ys.size() == 0 || thetas.size() == 0) {
    throw ConfigError("pose grid axes must be non-empty");
  }
  PoseGrid g;
  auto step = [](const Eigen::VectorXd& v) { return v.size() > 1 ? v[1] - v[0] : 1.0; };
  g.region = {{xs.minCoeff(), xs.maxCoeff()}, {ys.minCoeff(), ys.maxCoeff()}, {thetas.minCoeff(), thetas.maxCoeff()}};
  g.resolution = {step(xs), step(ys), step(thetas)};
  g.xs = std::move(xs);
  g.ys = std::move(ys);
  g.thetas = std::move(thetas);
  return g;
}

PoseGrid make_pose_grid(const SearchRegion& region, const GridResolution& resolution) {
  region.validate();
  resolution.validate();
  PoseGrid g;
  g.region = region;
  g.resolution = resolution;
  g.xs = snapped_axis(region.x, resolution.delta_x, "x");
  g.ys = snapped_axis(region.y, resolution.delta_y, "y");
  g.thetas = snapped_axis(region.theta, resolution.delta_theta, "theta");
  return g;
}

CartesianScan CartesianScan::centered(Image power, double meters_per_pixel) {
  CartesianScan s;
  s.center = {(static_cast<double>(power.rows()) - 1.0) / 2.0, (static_cast<double>(power.cols()) - 1.0) / 2.0};
  s.power = std::move(power);
  s.meters_per_pixel = meters_per_pixel;
  return s;
}

void CartesianScan::validate() const {
  if (power.rows() < 2 || power.cols() < 2) throw ShapeError("cartesian scan must be at least 2x2");
  if (!(meters_per_pixel > 0.0)) throw DataError("cartesian scan: meters_per_pixel must be positive");
  if (!all_in_unit_range(power)) throw DataError("cartesian scan: power values must lie in [0, 1]");
}

void PolarScan::validate() const {
  if (power.rows() < 2 || power.cols() < 2) throw ShapeError("polar scan must have >= 2 azimuths and range bins");
  if (!(range_resolution > 0.0)) throw DataError("polar scan: range_resolution must be positive");
  if (!all_in_unit_range(power)) throw DataError("polar scan: power values must lie in [0, 1]");
}

namespace {

struct PolarSource {
  double cx, cy, mpp, az0, az_step, range_res, max_bin;
  std::optional<Eigen::Vector2d> operator()(Eigen::Index ox, Eigen::Index oy) const {
    const double x = (static_cast<double>(ox) - cx) * mpp;
    const double y = (static_cast<double>(oy) - cy) * mpp;
    const double fr = std::hypot(x, y) / range_res;
    if (fr > max_bin) return std::nullopt;
    double phi = std::atan2(y, x) - az0;
    phi = std::fmod(phi, 2.0 * std::numbers::pi);
    if (phi < 0) phi += 2.0 * std::numbers::pi;
    return Eigen::Vector2d(phi / az_step, fr);
  }
};

PolarSource polar_source(const PolarScan& scan, int width, int height, double mpp) {
  return {(width - 1) / 2.0,
          (height - 1) / 2.0,
          mpp,
          scan.azimuth_0,
          2.0 * std::numbers::pi / scan.n_azimuths(),
          scan.range_resolution,
          static_cast<double>(scan.n_range_bins() - 1) + 1e-12};
}

struct RotationSource {
  double c, s;
  Eigen::Vector2d center;
  Eigen::Vector2d shift{0.0, 0.0};
  std::optional<Eigen::Vector2d> operator()(Eigen::Index ox, Eigen::Index oy) const {
    const double dx = static_cast<double>(ox) - center.x() - shift.x();
    const double dy = static_cast<double>(oy) - center.y() - shift.y();
    return Eigen::Vector2d(center.x() + c * dx + s * dy, center.y() - s * dx + c * dy);
  }
};

struct ResizeSource {
  double sx, sy;
  std::optional<Eigen::Vector2d> operator()(Eigen::Index ox, Eigen::Index oy) const {
    return Eigen::Vector2d((static_cast<double>(ox) + 0.5) * sx - 0.5, (static_cast<double>(oy) + 0.5) * sy - 0.5);
  }
};

}  // namespace

CartesianScan polar_to_cartesian(const PolarScan& scan, int width, int height, double meters_per_pixel) {
  if (!(meters_per_pixel > 0.0)) throw ConfigError("polar_to_cartesian: meters_per_pixel must be positive");
  if (width < 2 || height < 2) throw ConfigError("polar_to_cartesian: output must be at least 2x2");
  const PolarSource src = polar_source(scan, width, height, meters_per_pixel);
  Image out = detail::warp_gather(scan.power, width, height, src, Boundary::wrap, Boundary::zero);
  return CartesianScan::centered(std::move(out), meters_per_pixel);
}

Image polar_to_cartesian_backward(const PolarScan& scan, const CartesianScan& layout, const Image& grad_cartesian) {
  const PolarSource src = polar_source(scan, layout.width(), layout.height(), layout.meters_per_pixel);
  return detail::warp_scatter(grad_cartesian, scan.n_azimuths(), scan.n_range_bins(), src, Boundary::wrap,
                              Boundary::zero);
}

Image rotate_bilinear(const Image& img, double theta, const Eigen::Vector2d& center) {
  if (theta == 0.0) return img;
  const RotationSource src{std::cos(theta), std::sin(theta), center};
  return detail::warp_gather(img, img.rows(), img.cols(), src, Boundary::zero, Boundary::zero);
}

Image rotate_bilinear_backward(const Image& grad_out, double theta, const Eigen::Vector2d& center) {
  if (theta == 0.0) return grad_out;
  const RotationSource src{std::cos(theta), std::sin(theta), center};
  return detail::warp_scatter(grad_out, grad_out.rows(), grad_out.cols(), src, Boundary::zero, Boundary::zero);
}

CartesianScan rotate_bilinear(const CartesianScan& img, double theta) {
  CartesianScan out = img;
  out.power = rotate_bilinear(img.power, theta, img.center);
  return out;
}

Image resize_bilinear(const Image& img, int new_width, int new_height) {
  if (new_width < 2 || new_height < 2) throw ConfigError("resize_bilinear: target must be at least 2x2");
  if (new_width == img.rows() && new_height == img.cols()) return img;
  const ResizeSource src{static_cast<double>(img.rows()) / new_width, static_cast<double>(img.cols()) / new_height};
  return detail::warp_gather(img, new_width, new_height, src, Boundary::clamp, Boundary::clamp);
}

Image resize_bilinear_backward(const Image& grad_out, int old_width, int old_height) {
  if (grad_out.rows() == old_width && grad_out.cols() == old_height) return grad_out;
  const ResizeSource src{static_cast<double>(old_width) / grad_out.rows(),
                         static_cast<double>(old_height) / grad_out.cols()};
  return detail::warp_scatter(grad_out, old_width, old_height, src, Boundary::clamp, Boundary::clamp);
}

CartesianScan resize_bilinear(const CartesianScan& img, int new_width, int new_height) {
  CartesianScan out;
  out.power = resize_bilinear(img.power, new_width, new_height);
  const double fx = static_cast<double>(new_width) / img.width();
  const double fy = static_cast<double>(new_height) / img.height();
  out.meters_per_pixel = img.meters_per_pixel / fx;
  out.center = {(img.center.x() + 0.5) * fx - 0.5, (img.center.y() + 0.5) * fy - 0.5};
  return out;
}

CartesianScan warp_scan(const CartesianScan& img, const Pose& pose_of_scan_in_target) {
  RotationSource src{std::cos(pose_of_scan_in_target.dtheta), std::sin(pose_of_scan_in_target.dtheta), img.center};
  src.shift = Eigen::Vector2d(pose_of_scan_in_target.dx, pose_of_scan_in_target.dy) / img.meters_per_pixel;
  CartesianScan out = img;
  out.power = detail::warp_gather(img.power, img.power.rows(), img.power.cols(), src, Boundary::zero, Boundary::zero);
  return out;
}

}  // namespace rcsm
