#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rcsm/dataset.hpp"
#include "rcsm/pose_estimation.hpp"
#include "rcsm/trajectory.hpp"

namespace rcsm {

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1]:
/// position (n - 1) q in the sorted values.
double quantile(std::vector<double> values, double q);
inline double interquartile_range(const std::vector<double>& values) {
  return quantile(values, 0.75) - quantile(values, 0.25);
}

struct KittiConfig {
  /// Segment lengths in metres. Empty means default_segment_lengths(gt).
  std::vector<double> segment_lengths;
  int start_stride{1};            ///< frames between consecutive segment starts
  bool weight_by_count{false};    ///< KITTI devkit averaging instead of a plain mean over lengths

  void validate() const;
};

/// {1, ..., 8} tenths of the ground-truth path length, i.e. the 100..800 m
/// ladder rescaled to a trajectory of total length 1000 m.
std::vector<double> default_segment_lengths(std::span<const Pose> gt_abs);

struct SegmentErrors {
  double length{0.0};
  std::size_t count{0};
  double trans_pct{0.0};        ///< mean over segments of this length
  double rot_deg_per_m{0.0};
};

struct TimingStats {
  double mean{0.0};   ///< seconds
  double std{0.0};    ///< sample standard deviation, 0 for a single repetition
  int repetitions{0};
};

struct OdometryReport {
  bool empty{true};             ///< no segment fitted inside the trajectory
  double trans_pct_mean{0.0};
  double trans_pct_iqr{0.0};
  double rot_deg_per_m_mean{0.0};
  double rot_deg_per_m_iqr{0.0};
  std::size_t n_segments{0};
  bool weight_by_count{false};
  std::vector<SegmentErrors> per_length;
  std::optional<TimingStats> runtime;
};

/// Relative-pose residual inverse(est_i^-1 est_j) (gt_i^-1 gt_j) over every
/// start i and the first j whose ground-truth path length from i reaches L.
/// Translation is reported as a percentage of L, rotation in deg/m.
OdometryReport kitti_errors(std::span<const Pose> est_abs, std::span<const Pose> gt_abs, const KittiConfig& cfg = {});
/// Trajectory form: integrates both and checks that the timestamps agree.
OdometryReport kitti_errors(const Trajectory& est, const Trajectory& gt, const KittiConfig& cfg = {});

/// Times `fn` after `warmup` untimed calls; one sample per repetition.
TimingStats benchmark(const std::function<void()>& fn, int repetitions, int warmup = 1);

struct BenchmarkConfig {
  int repetitions{10};
  int warmup{1};
  int threads{1};   ///< worker cap while timing; 1 keeps timings stable
};

/// Wall-clock per match over `pairs`: each repetition matches every pair
/// once and contributes the pass time divided by the pair count.
TimingStats benchmark_matching(std::span<const TrainingSample> pairs, const MaskNet* net, const PoseGrid& grid,
                               const CartesianLayout& layout, double beta, const BenchmarkConfig& cfg = {});

struct SweepConfig {
  SearchRegion region{SearchRegion::symmetric(4.0, 4.0, 0.2)};
  double delta_theta{0.05};
  double extent{32.0};  ///< side of the Cartesian raster in metres
  double beta{100.0};
  BenchmarkConfig timing{};  ///< repetitions == 0 skips timing

  void validate() const;
};

struct SweepRow {
  double resolution{0.0};
  double trans_error_m{0.0};    ///< mean |t_est - t_gt|
  double rot_error_rad{0.0};    ///< mean |wrap(theta_est - theta_gt)|
  std::optional<TimingStats> runtime;
};

/// Raw-scan matching with the raster and the translational grid both at
/// resolution delta. Polar scans are re-rasterised at delta; Cartesian-only
/// samples are resampled by the correlation itself.
std::vector<SweepRow> sweep_resolution(std::span<const TrainingSample> pairs, std::span<const double> resolutions,
                                       const SweepConfig& cfg = {});

/// `resolution,trans_error_m,rot_error_rad,runtime_mean_s,runtime_std_s`;
/// runtime cells are empty for untimed rows.
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

/// `t,dx,dy,dtheta,c00,c01,c02,c11,c12,c22`; the covariance columns are left
/// empty when the trajectory carries none.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);
Trajectory read_trajectory_csv(const std::filesystem::path& path);

void write_report_json(const std::filesystem::path& path, const OdometryReport& report);

}  // namespace rcsm
