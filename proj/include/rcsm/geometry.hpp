#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "rcsm/types.hpp"

namespace rcsm {

/// Wraps an angle to (-pi, pi]. Angles already in range come back unchanged.
template <typename Scalar>
Scalar wrap_angle(Scalar angle) {
  const Scalar pi = std::numbers::pi_v<Scalar>;
  if (angle > -pi && angle <= pi) return angle;
  const Scalar two_pi = 2 * pi;
  Scalar a = std::fmod(angle + pi, two_pi);
  if (a <= Scalar(0)) a += two_pi;
  return a - pi;
}

/// Planar rigid transform [dx, dy, dtheta]. Angles are kept in (-pi, pi].
template <typename Scalar>
struct Pose2 {
  Scalar dx{0};
  Scalar dy{0};
  Scalar dtheta{0};

  Pose2() = default;
  Pose2(Scalar x, Scalar y, Scalar theta) : dx(x), dy(y), dtheta(wrap_angle(theta)) {}

  static Pose2 identity() { return {}; }

  static Pose2 from_vector(const Eigen::Matrix<Scalar, 3, 1>& v) { return {v(0), v(1), v(2)}; }
  Eigen::Matrix<Scalar, 3, 1> vector() const { return {dx, dy, dtheta}; }

  bool is_finite() const { return std::isfinite(dx) && std::isfinite(dy) && std::isfinite(dtheta); }
};

using Pose = Pose2<double>;

/// Pose of frame b expressed through frame a.
template <typename Scalar>
Pose2<Scalar> compose(const Pose2<Scalar>& a, const Pose2<Scalar>& b) {
  const Scalar c = std::cos(a.dtheta);
  const Scalar s = std::sin(a.dtheta);
  return {a.dx + c * b.dx - s * b.dy, a.dy + s * b.dx + c * b.dy, a.dtheta + b.dtheta};
}

template <typename Scalar>
Pose2<Scalar> inverse(const Pose2<Scalar>& p) {
  const Scalar c = std::cos(p.dtheta);
  const Scalar s = std::sin(p.dtheta);
  return {-c * p.dx - s * p.dy, s * p.dx - c * p.dy, -p.dtheta};
}

/// Component-wise residual a - b with the angle wrapped.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> pose_residual(const Pose2<Scalar>& a, const Pose2<Scalar>& b) {
  return {a.dx - b.dx, a.dy - b.dy, wrap_angle(a.dtheta - b.dtheta)};
}

struct Interval {
  double min{0};
  double max{0};
  double span() const { return max - min; }
};

/// Bounds of the pose search in metres and radians.
struct SearchRegion {
  Interval x;
  Interval y;
  Interval theta;

  static SearchRegion symmetric(double half_x, double half_y, double half_theta) {
    return {{-half_x, half_x}, {-half_y, half_y}, {-half_theta, half_theta}};
  }
  /// Throws ConfigError unless min < max on every axis and the identity is inside.
  void validate() const;
};

struct GridResolution {
  double delta_x{0};
  double delta_y{0};
  double delta_theta{0};
  void validate() const;
};

/// Regular grid of candidate poses. Stored as its three axes; the full
/// meshgrid is `pose(i, j, k) = (xs[i], ys[j], thetas[k])`.
struct PoseGrid {
  SearchRegion region;
  GridResolution resolution;
  Eigen::VectorXd xs;
  Eigen::VectorXd ys;
  Eigen::VectorXd thetas;

  int nx() const { return static_cast<int>(xs.size()); }
  int ny() const { return static_cast<int>(ys.size()); }
  int ntheta() const { return static_cast<int>(thetas.size()); }
  int size() const { return nx() * ny() * ntheta(); }

  double gx(int i, int, int) const { return xs[i]; }
  double gy(int, int j, int) const { return ys[j]; }
  double gtheta(int, int, int k) const { return thetas[k]; }
  Pose pose(int i, int j, int k) const { return {xs[i], ys[j], thetas[k]}; }

  /// Builds a grid from explicit axes (single-sample axes are allowed here).
  static PoseGrid from_axes(Eigen::VectorXd xs, Eigen::VectorXd ys, Eigen::VectorXd thetas);
};

/// MeshGrid over the region at the given resolution. Endpoints are snapped
/// to integer multiples of the resolution so the identity pose is a sample.
/// Throws ConfigError if any axis would have fewer than two samples.
PoseGrid make_pose_grid(const SearchRegion& region, const GridResolution& resolution);

/// Radar power on a Cartesian raster, values in [0, 1].
struct CartesianScan {
  Image power;
  double meters_per_pixel{1.0};
  Eigen::Vector2d center{0.0, 0.0};  ///< sensor origin in pixel coordinates

  int width() const { return static_cast<int>(power.rows()); }
  int height() const { return static_cast<int>(power.cols()); }

  /// Scan with the sensor at the geometric centre of the raster.
  static CartesianScan centered(Image power, double meters_per_pixel);
  void validate() const;
};

/// Radar power indexed by (azimuth, range bin). Azimuth a points along
/// azimuth_0 + a * 2pi / n_azimuths (counter-clockwise from +x), range bin r
/// sits at r * range_resolution metres.
struct PolarScan {
  Image power;
  double range_resolution{1.0};
  double azimuth_0{0.0};

  int n_azimuths() const { return static_cast<int>(power.rows()); }
  int n_range_bins() const { return static_cast<int>(power.cols()); }
  double max_range() const { return (n_range_bins() - 1) * range_resolution; }
  void validate() const;
};

// Warps. Positive angles rotate counter-clockwise in the (x right, y up)
// frame. Out-of-bounds samples read as zero except in resize, which clamps
// to the edge. Every warp is linear in the image and has an adjoint
// (`*_backward`) that scatters gradients through the same bilinear weights.

CartesianScan polar_to_cartesian(const PolarScan& scan, int width, int height, double meters_per_pixel);
Image polar_to_cartesian_backward(const PolarScan& scan, const CartesianScan& layout, const Image& grad_cartesian);

Image rotate_bilinear(const Image& img, double theta, const Eigen::Vector2d& center);
Image rotate_bilinear_backward(const Image& grad_out, double theta, const Eigen::Vector2d& center);
CartesianScan rotate_bilinear(const CartesianScan& img, double theta);

Image resize_bilinear(const Image& img, int new_width, int new_height);
Image resize_bilinear_backward(const Image& grad_out, int old_width, int old_height);
CartesianScan resize_bilinear(const CartesianScan& img, int new_width, int new_height);

/// Re-expresses a scan taken in frame A in frame B, given the pose of A in
/// B: rotate about the sensor origin, then translate by (dx, dy).
CartesianScan warp_scan(const CartesianScan& img, const Pose& pose_of_scan_in_target);

}  // namespace rcsm
