#include "rcsm/pose_estimation.hpp"

#include <array>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "rcsm/errors.hpp"

namespace rcsm {

namespace {

/// Weighted mean of the grid axes, without angle wrapping.
Vector3 weighted_mean(const PoseGrid& grid, const Volume& omega) {
  Vector3 m = Vector3::Zero();
  for (int k = 0; k < grid.ntheta(); ++k) {
    const auto s = omega.slice(k);
    const double mass = s.sum();
    m.x() += (s.rowwise().sum().matrix().transpose() * grid.xs)(0);
    m.y() += (s.colwise().sum().matrix() * grid.ys)(0);
    m.z() += mass * grid.thetas[k];
  }
  return m;
}

void check_shape(const PoseGrid& grid, const Volume& v, const char* what) {
  if (v.nx() != grid.nx() || v.ny() != grid.ny() || v.ntheta() != grid.ntheta()) {
    throw ShapeError(std::string(what) + ": volume shape does not match the pose grid");
  }
}

}  // namespace

SoftArgmax soft_argmax(const PoseGrid& grid, const CorrelationVolume& c, double beta) {
  check_shape(grid, c.scores, "soft_argmax");
  if (!(beta > 0.0)) throw ConfigError("soft_argmax: beta must be positive");
  if (!c.scores.values().allFinite()) throw NumericError("soft_argmax: non-finite correlation score");

  SoftArgmax out;
  out.weights.omega = Volume(grid.nx(), grid.ny(), grid.ntheta());
  Eigen::ArrayXd& w = out.weights.omega.values();
  const double peak = c.scores.values().maxCoeff();
  w = (beta * (c.scores.values() - peak)).exp();
  w /= w.sum();
  const Vector3 m = weighted_mean(grid, out.weights.omega);
  out.pose = Pose(m.x(), m.y(), m.z());
  return out;
}

Volume soft_argmax_backward(const PoseGrid& grid, const SoftmaxWeights& w, double beta, const Vector3& grad_pose) {
  check_shape(grid, w.omega, "soft_argmax_backward");
  // d mean / d c_s = beta * omega_s * (x_s - mean)
  const Vector3 m = weighted_mean(grid, w.omega);
  Volume g(grid.nx(), grid.ny(), grid.ntheta());
  const Eigen::ArrayXd gx = (grid.xs.array() - m.x()) * grad_pose.x();
  const Eigen::ArrayXd gy = (grid.ys.array() - m.y()) * grad_pose.y();
  for (int k = 0; k < grid.ntheta(); ++k) {
    const double gt = (grid.thetas[k] - m.z()) * grad_pose.z();
    auto out = g.slice(k);
    const auto om = w.omega.slice(k);
    for (int j = 0; j < grid.ny(); ++j) {
      out.col(j) = beta * om.col(j) * (gx + gy[j] + gt);
    }
  }
  return g;
}

Covariance estimate_covariance(const PoseGrid& grid, const SoftmaxWeights& w, const Pose& mean) {
  check_shape(grid, w.omega, "estimate_covariance");
  const Vector3 pivot = mean.vector();
  Matrix3 second = Matrix3::Zero();
  Vector3 first = Vector3::Zero();
  for (int k = 0; k < grid.ntheta(); ++k) {
    const auto om = w.omega.slice(k);
    const double dt = grid.thetas[k] - pivot.z();
    for (int j = 0; j < grid.ny(); ++j) {
      const double dy = grid.ys[j] - pivot.y();
      for (int i = 0; i < grid.nx(); ++i) {
        const double wt = om(i, j);
        if (wt == 0.0) continue;
        const Vector3 d(grid.xs[i] - pivot.x(), dy, dt);
        second.noalias() += wt * d * d.transpose();
        first += wt * d;
      }
    }
  }
  // E[(x - p)(x - p)^T] - (E[x] - p)(E[x] - p)^T == E[x x^T] - E[x] E[x]^T
  Matrix3 cov = second - first * first.transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();

  Covariance out{cov, 0.0};
  Eigen::SelfAdjointEigenSolver<Matrix3> eig(cov);
  const Vector3 lambda = eig.eigenvalues();
  if (lambda.minCoeff() < 0.0) {
    out.clamp = -lambda.minCoeff();
    out.matrix = eig.eigenvectors() * lambda.cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose();
    out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
  }
  return out;
}

PoseEstimate estimate_pose(const CorrelationVolume& c, double beta) {
  const SoftArgmax sa = soft_argmax(c.grid, c, beta);
  const Covariance cov = estimate_covariance(c.grid, sa.weights, sa.pose);
  return {sa.pose, cov.matrix, beta, cov.clamp};
}

std::pair<Image, Image> compute_masks(const MaskNet& net, const Image& z1, const Image& z2) {
  if (net.config().input_mode == InputMode::dual) {
    const std::array<Image, 2> in = {z1, z2};
    auto masks = forward(net, in);
    return {std::move(masks[0]), std::move(masks[1])};
  }
  auto m1 = forward(net, std::span<const Image>(&z1, 1));
  auto m2 = forward(net, std::span<const Image>(&z2, 1));
  return {std::move(m1[0]), std::move(m2[0])};
}

CorrelationVolume masked_correlation(const CartesianScan& s1, const CartesianScan& s2, const MaskNet* net,
                                     const PoseGrid& grid) {
  if (net == nullptr) return correlate_fft(grid, s1, s2);
  if (net->config().input_frame != InputFrame::cartesian) {
    throw ConfigError("match: network expects polar input; use the polar overload");
  }
  auto [m1, m2] = compute_masks(*net, s1.power, s2.power);
  CartesianScan a = s1, b = s2;
  a.power = apply_mask(m1, s1.power);
  b.power = apply_mask(m2, s2.power);
  return correlate_fft(grid, a, b);
}

CorrelationVolume masked_correlation(const PolarScan& s1, const PolarScan& s2, const CartesianLayout& layout,
                                     const MaskNet* net, const PoseGrid& grid) {
  PolarScan a = s1, b = s2;
  if (net != nullptr) {
    if (net->config().input_frame != InputFrame::polar) {
      throw ConfigError("match: network expects Cartesian input; use the Cartesian overload");
    }
    auto [m1, m2] = compute_masks(*net, s1.power, s2.power);
    a.power = apply_mask(m1, s1.power);
    b.power = apply_mask(m2, s2.power);
  }
  const CartesianScan c1 = polar_to_cartesian(a, layout.width, layout.height, layout.meters_per_pixel);
  const CartesianScan c2 = polar_to_cartesian(b, layout.width, layout.height, layout.meters_per_pixel);
  return correlate_fft(grid, c1, c2);
}

CorrelationVolume masked_correlation(const TrainingSample& sample, const MaskNet* net, const PoseGrid& grid,
                                     const CartesianLayout& layout) {
  if (net != nullptr && net->config().input_frame == InputFrame::polar) {
    if (!sample.p1 || !sample.p2) throw DataError("match: polar-frame network needs polar scans");
    return masked_correlation(*sample.p1, *sample.p2, layout, net, grid);
  }
  return masked_correlation(sample.z1, sample.z2, net, grid);
}

PoseEstimate match(const CartesianScan& s1, const CartesianScan& s2, const MaskNet* net, const PoseGrid& grid,
                   double beta) {
  return estimate_pose(masked_correlation(s1, s2, net, grid), beta);
}

PoseEstimate match(const PolarScan& s1, const PolarScan& s2, const CartesianLayout& layout, const MaskNet* net,
                   const PoseGrid& grid, double beta) {
  return estimate_pose(masked_correlation(s1, s2, layout, net, grid), beta);
}

MatchGradients match_backward(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2, double beta,
                              const Vector3& grad_pose) {
  const CorrelationVolume c = correlate_fft(grid, s1, s2);
  const SoftArgmax sa = soft_argmax(grid, c, beta);
  const Volume dc = soft_argmax_backward(grid, sa.weights, beta, grad_pose);
  CorrelationGradients g = correlate_backward(grid, s1, s2, dc);
  return {std::move(g.s1), std::move(g.s2)};
}

}  // namespace rcsm
