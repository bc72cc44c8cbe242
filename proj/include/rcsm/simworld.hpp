#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "rcsm/dataset.hpp"
#include "rcsm/geometry.hpp"
#include "rcsm/pose_estimation.hpp"

namespace rcsm {

// ---------------------------------------------------------------------------
// World description

struct Segment {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
  double reflectivity{0.5};
};

struct PointReflector {
  Eigen::Vector2d position;
  double reflectivity{0.5};
};

/// A moving disc-shaped reflector (a vehicle-sized cluster of returns).
struct DynamicObject {
  Eigen::Vector2d position;  ///< at time 0
  Eigen::Vector2d velocity;  ///< metres per second
  double radius{1.0};
  double reflectivity{1.0};

  Eigen::Vector2d position_at(double time) const { return position + time * velocity; }
};

struct WorldModel {
  std::vector<Segment> segments;
  std::vector<PointReflector> points;
  std::vector<DynamicObject> dynamic;
  Eigen::Vector2d bounds_min{-100.0, -100.0};
  Eigen::Vector2d bounds_max{100.0, 100.0};
  std::uint64_t seed{0};

  /// Throws ConfigError on reflectivities outside [0, 1], non-positive radii
  /// or non-finite bounds.
  void validate() const;
  bool contains(const Eigen::Vector2d& p) const;
};

struct SensorConfig {
  int n_azimuths{128};
  int n_range_bins{128};
  double range_resolution{0.25};   ///< metres per bin
  double azimuth_0{0.0};
  double reference_range{5.0};     ///< power falls as min(1, reference_range / r)
  double range_spread_bins{2.0};   ///< half-width of the triangular range response

  double max_range() const { return (n_range_bins - 1) * range_resolution; }
  void validate() const;
};

struct NoiseConfig {
  double speckle_std{0.0};           ///< std of the multiplicative speckle factor
  double ghost_probability{0.0};     ///< chance that an azimuth carries a ghost streak
  double saturation_level{1.0};      ///< power is clipped here
  double receiver_noise_floor{0.0};  ///< mean of the exponential additive floor
  double ghost_power{0.6};           ///< peak power of a ghost streak

  static NoiseConfig none() { return {}; }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Rendering

/// Noise-free power split by origin, plus the final noisy scan.
struct LabelledScan {
  PolarScan scan;
  Image static_power;   ///< pre-noise contribution of segments and points
  Image dynamic_power;  ///< pre-noise contribution of dynamic objects
  Image ghost_power;    ///< injected ghost streaks

  /// Fraction of noise-free return power that comes from dynamic objects.
  double dynamic_fraction() const;
};

/// Ray-casts one scan: per azimuth the first hit among segments and dynamic
/// discs (positions advanced to `time`) returns reflectivity * min(1, r_ref/r),
/// spread over neighbouring range bins. Point reflectors are splatted at their
/// exact bearing and range unless something nearer blocks that bearing. Noise
/// is applied afterwards (speckle, floor, ghosts, saturation) and the result
/// clamped to [0, 1]. Deterministic in `seed`.
PolarScan render_scan(const WorldModel& world, const Pose& sensor_pose, const SensorConfig& sensor,
                      const NoiseConfig& noise, double time, std::uint64_t seed);
LabelledScan render_scan_labelled(const WorldModel& world, const Pose& sensor_pose, const SensorConfig& sensor,
                                  const NoiseConfig& noise, double time, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sequences

/// Unicycle motion: constant speed and yaw rate with per-frame jitter.
struct TrajectorySpec {
  int n_frames{30};
  double frame_period{0.25};  ///< seconds
  double speed{6.0};          ///< metres per second
  double yaw_rate{0.0};       ///< radians per second
  double speed_jitter{0.0};   ///< std, metres per second
  double yaw_jitter{0.0};     ///< std, radians per second
  Pose start;
};

struct SimulatedSequence {
  std::vector<double> times;
  std::vector<Pose> poses;  ///< sensor poses in the world frame
  std::vector<PolarScan> scans;
  std::vector<double> dynamic_fraction;
  /// Consecutive pairs: sample i holds scans i+1 (z1) and i (z2).
  std::vector<Pose> relative() const;
};

/// Renders a sequence along the trajectory. Per-step motion is clamped to 90%
/// of the search region so every relative pose lies inside it. Frame f uses
/// the noise seed indexed_seed(seed, f).
SimulatedSequence generate_sequence(const WorldModel& world, const TrajectorySpec& spec, const SensorConfig& sensor,
                                    const NoiseConfig& noise, const SearchRegion& region, std::uint64_t seed);

/// Training pairs on a Cartesian raster. Polar scans are kept alongside.
Dataset make_training_pairs(const SimulatedSequence& seq, const CartesianLayout& layout);

// ---------------------------------------------------------------------------
// Static-structure labels

/// Warps every scan into the target frame (poses[i] is the pose of scan i's
/// frame in the target frame), counts per cell how often power exceeds
/// `power_threshold`, and labels a cell 1 iff the count is strictly greater
/// than `min_count`.
Image generate_static_labels(std::span<const CartesianScan> scans, std::span<const Pose> poses,
                             double power_threshold, int min_count = 9);

/// Labels for every frame of a sequence, using all frames whose sensor
/// position lies within `radius` metres. Frames with too few neighbours
/// get all-zero labels.
std::vector<Image> sequence_static_labels(std::span<const CartesianScan> scans, std::span<const Pose> poses,
                                          double radius, double power_threshold, int min_count = 9);

// ---------------------------------------------------------------------------
// Scenario factory

/// Random desk-scale scenario: walls and point reflectors scattered around a
/// unicycle path, and bright distractor discs travelling roughly alongside
/// the sensor.
struct ScenarioSpec {
  double half_extent{60.0};  ///< world margin around the nominal path's bounding box
  int n_segments{45};
  double segment_min_length{3.0};
  double segment_max_length{12.0};
  double static_reflectivity_min{0.25};
  double static_reflectivity_max{0.6};
  int n_points{60};
  double clearance{2.5};  ///< keep-out distance between static structure and the path
  int n_distractors{6};
  double distractor_radius_min{0.8};
  double distractor_radius_max{1.6};
  double distractor_reflectivity{1.0};
  double distractor_min_distance{4.0};
  double distractor_max_distance{14.0};
  double distractor_velocity_std{0.6};  ///< deviation from the sensor's initial velocity
  TrajectorySpec trajectory;
  double yaw_rate_max{0.2};             ///< per-scenario yaw rate drawn from [-max, max]
};

struct Scenario {
  WorldModel world;
  TrajectorySpec trajectory;
};

Scenario make_scenario(const ScenarioSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Files

/// Scan file (little endian): "RSCN", u32 version, u8 frame type (0 Cartesian,
/// 1 polar), u32 dims[2], float32 payload in row-major order over the two
/// dims, then metadata: polar f64 range_resolution, f64 azimuth_0; Cartesian
/// f64 meters_per_pixel, f64 center_x, f64 center_y.
inline constexpr std::uint32_t kScanFormatVersion = 1;
using AnyScan = std::variant<CartesianScan, PolarScan>;
void write_scan(const std::filesystem::path& path, const AnyScan& scan);
AnyScan read_scan(const std::filesystem::path& path);

/// One simulated sequence on disk, described by the dataset manifest.
struct ManifestFrame {
  double time{0.0};
  Pose pose;
  std::string scan;   ///< path relative to the dataset directory
  std::string label;  ///< optional, relative path of a Cartesian label raster
};

struct ManifestSequence {
  std::string name;
  double dynamic_fraction{0.0};
  std::vector<ManifestFrame> frames;
};

struct DatasetManifest {
  SensorConfig sensor;
  CartesianLayout layout;
  std::vector<ManifestSequence> sequences;
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Loads every consecutive pair of every sequence. Labels are attached when
/// all frames of the sequence have them.
Dataset load_dataset(const std::filesystem::path& dataset_dir, const DatasetManifest& manifest);

}  // namespace rcsm
