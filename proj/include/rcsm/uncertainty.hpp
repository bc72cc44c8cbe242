#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "rcsm/dataset.hpp"
#include "rcsm/pose_estimation.hpp"

namespace rcsm {

struct Mahalanobis {
  double d2{0.0};
  double lambda{0.0};       ///< ridge added to the covariance before inversion
  bool degenerate{false};   ///< lambda had to grow beyond 1e-6
};

/// d^2 = r^T (Sigma + lambda I)^-1 r with r = wrap(gt - mean). lambda starts
/// at 1e-9 and grows tenfold until the Cholesky factorisation succeeds.
Mahalanobis mahalanobis(const Pose& gt, const PoseEstimate& est);
inline double mahalanobis_sq(const Pose& gt, const PoseEstimate& est) { return mahalanobis(gt, est).d2; }

/// Correlation volumes kept once so the temperature can be swept without
/// re-matching. `mean` is the soft-argmax pose at beta0.
struct CalibrationSample {
  CorrelationVolume volume;
  Pose gt;
  Pose mean;
};

struct CalibrationSet {
  double beta0{kDefaultBeta};
  std::vector<CalibrationSample> samples;
};

CalibrationSet collect_calibration_set(std::span<const TrainingSample> data, const MaskNet* net, const PoseGrid& grid,
                                       const CartesianLayout& layout, double beta0);

/// Estimates at temperature `beta`: the covariance comes from softmax(beta C)
/// while the mean stays at the beta0 pose.
std::vector<PoseEstimate> estimates_at(const CalibrationSet& set, double beta);

struct MeanMahalanobis {
  double value{0.0};
  std::size_t degenerate{0};
};
MeanMahalanobis mean_mahalanobis(const CalibrationSet& set, double beta);

struct CalibrationConfig {
  double beta_min{0.1};
  double beta_max{10.0};
  int grid_points{25};          ///< log-spaced
  int refine_iterations{20};    ///< bisection steps on log(beta) around the target
  double target{3.0};           ///< state dimension

  void validate() const;
};

struct CalibrationResult {
  double beta_star{0.0};
  double mean_mahalanobis{0.0};
  std::vector<std::pair<double, double>> sweep;  ///< (beta, mean d^2), ascending in beta
  std::size_t n_samples{0};
  std::size_t degenerate{0};  ///< degenerate covariances at beta_star
};

/// Sweeps the log grid, then bisects between the two grid points that bracket
/// the target. beta_star is the evaluated beta whose mean d^2 is closest to it.
CalibrationResult calibrate_beta(const CalibrationSet& set, const CalibrationConfig& cfg = {});

/// Explicit ascending beta list, no refinement.
CalibrationResult calibrate_beta(const CalibrationSet& set, std::span<const double> beta_grid, double target = 3.0);

/// Per-component fraction of |error| <= z * sigma, z the two-sided normal
/// quantile for `confidence`. Closed interval.
struct CoverageReport {
  Vector3 fraction{Vector3::Zero()};
  double z{0.0};
  std::size_t n{0};
};
CoverageReport coverage_report(std::span<const Vector3> errors, std::span<const PoseEstimate> estimates,
                               double confidence);
/// Coverage of the beta0 means under the beta covariances.
CoverageReport coverage_report(const CalibrationSet& set, double beta, double confidence);

/// `beta,mean_mahalanobis` per sweep row.
void write_calibration_csv(const std::filesystem::path& path, const CalibrationResult& result);
/// {"beta_star", "mean_mahalanobis", "n_samples"}
void write_calibration_json(const std::filesystem::path& path, const CalibrationResult& result);

}  // namespace rcsm
