#pragma once

#include <utility>

#include "rcsm/correlation.hpp"
#include "rcsm/dataset.hpp"
#include "rcsm/geometry.hpp"
#include "rcsm/masknet.hpp"
#include "rcsm/volume.hpp"

namespace rcsm {

/// Softmax temperature used unless a caller overrides it.
inline constexpr double kDefaultBeta = 1.0;

/// omega = softmax(beta * C) over the whole pose grid.
struct SoftmaxWeights {
  Volume omega;
};

struct SoftArgmax {
  Pose pose;
  SoftmaxWeights weights;
};

/// Weighted mean of the grid poses under softmax(beta * C). The angle is a
/// plain weighted sum, valid while the theta search span stays well inside
/// (-pi, pi).
SoftArgmax soft_argmax(const PoseGrid& grid, const CorrelationVolume& c, double beta);

/// dL/dC given dL/d(dx, dy, dtheta) of soft_argmax.
Volume soft_argmax_backward(const PoseGrid& grid, const SoftmaxWeights& w, double beta, const Vector3& grad_pose);

struct Covariance {
  Matrix3 matrix;
  double clamp{0.0};  ///< magnitude of the most negative eigenvalue removed
};

/// sum_s omega_s x_s x_s^T - mean mean^T, symmetrised and clamped to PSD.
/// `mean` must be the weighted mean of the grid under `w`; it is used as the
/// pivot of a centred accumulation.
Covariance estimate_covariance(const PoseGrid& grid, const SoftmaxWeights& w, const Pose& mean);

/// Gaussian pose posterior N(mean, covariance). Units: metres and radians.
struct PoseEstimate {
  Pose mean;
  Matrix3 covariance{Matrix3::Zero()};
  double beta_used{kDefaultBeta};
  double covariance_clamp{0.0};
};

/// Soft-argmax plus covariance from an existing correlation volume.
PoseEstimate estimate_pose(const CorrelationVolume& c, double beta);

/// Masks for a scan pair: two single-mode forwards or one dual-mode forward.
std::pair<Image, Image> compute_masks(const MaskNet& net, const Image& z1, const Image& z2);

/// Masked correlative scan matching. Applies S = f(Z) (.) Z when a
/// Cartesian-frame network is supplied (raw scans otherwise), builds the
/// correlation volume and returns the pose of s1's frame in s2's frame.
PoseEstimate match(const CartesianScan& s1, const CartesianScan& s2, const MaskNet* net, const PoseGrid& grid,
                   double beta = kDefaultBeta);

/// Cartesian raster used when converting polar scans for correlation.
struct CartesianLayout {
  int width{64};
  int height{64};
  double meters_per_pixel{0.5};
};

/// Polar variant: masks in polar space (when a polar-frame network is
/// supplied), then converts the masked scans to Cartesian and matches.
PoseEstimate match(const PolarScan& s1, const PolarScan& s2, const CartesianLayout& layout, const MaskNet* net,
                   const PoseGrid& grid, double beta = kDefaultBeta);

/// Correlation volume behind match(): masked scans when a network is given.
CorrelationVolume masked_correlation(const CartesianScan& s1, const CartesianScan& s2, const MaskNet* net,
                                     const PoseGrid& grid);
CorrelationVolume masked_correlation(const PolarScan& s1, const PolarScan& s2, const CartesianLayout& layout,
                                     const MaskNet* net, const PoseGrid& grid);
/// Picks the polar path for polar-frame networks, the Cartesian one otherwise.
CorrelationVolume masked_correlation(const TrainingSample& sample, const MaskNet* net, const PoseGrid& grid,
                                     const CartesianLayout& layout);

struct MatchGradients {
  Image s1;
  Image s2;
};

/// Gradient of a scalar loss on the soft-argmax pose with respect to the
/// (already masked) scans fed into the correlation.
MatchGradients match_backward(const PoseGrid& grid, const CartesianScan& s1, const CartesianScan& s2, double beta,
                              const Vector3& grad_pose);

}  // namespace rcsm
