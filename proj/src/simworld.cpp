#include "rcsm/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>

#include "rcsm/errors.hpp"
#include "rcsm/parallel.hpp"
#include "rcsm/seed.hpp"
#include "rcsm/trajectory.hpp"

namespace rcsm {

namespace {

using std::numbers::pi;

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("world: ") + what + " reflectivity must be in [0, 1]");
}

enum class HitKind { none, segment, disc };

struct Hit {
  double range{std::numeric_limits<double>::infinity()};
  double power{0.0};
  HitKind kind{HitKind::none};
};

/// Nearest intersection of the ray o + t d (t > 0, |d| = 1) with the scene.
Hit cast_ray(const WorldModel& world, std::span<const Eigen::Vector2d> discs, const Eigen::Vector2d& o,
             const Eigen::Vector2d& d) {
  Hit best;
  for (const Segment& s : world.segments) {
    const Eigen::Vector2d e = s.b - s.a;
    const double denom = cross2(d, e);
    if (std::abs(denom) < 1e-12) continue;
    const Eigen::Vector2d ao = s.a - o;
    const double t = cross2(ao, e) / denom;
    const double u = cross2(ao, d) / denom;
    if (t > 1e-9 && u >= 0.0 && u <= 1.0 && t < best.range) best = {t, s.reflectivity, HitKind::segment};
  }
  for (std::size_t i = 0; i < world.dynamic.size(); ++i) {
    const DynamicObject& obj = world.dynamic[i];
    const Eigen::Vector2d f = o - discs[i];
    const double b = f.dot(d);
    const double c = f.squaredNorm() - obj.radius * obj.radius;
    if (c <= 0.0) continue;  // sensor inside the object: it cannot be seen
    const double disc = b * b - c;
    if (disc < 0.0) continue;
    const double t = -b - std::sqrt(disc);
    if (t > 1e-9 && t < best.range) best = {t, obj.reflectivity, HitKind::disc};
  }
  return best;
}

/// Adds `power` around fractional bin r / res with a triangular response.
void deposit(Eigen::Ref<Eigen::ArrayXXd> img, Eigen::Index az, double range, double power, const SensorConfig& s,
             double weight = 1.0) {
  const double q = range / s.range_resolution;
  const double h = s.range_spread_bins;
  const auto lo = static_cast<Eigen::Index>(std::ceil(q - h));
  const auto hi = static_cast<Eigen::Index>(std::floor(q + h));
  for (Eigen::Index b = std::max<Eigen::Index>(lo, 0); b <= std::min<Eigen::Index>(hi, s.n_range_bins - 1); ++b) {
    const double w = 1.0 - std::abs(static_cast<double>(b) - q) / h;
    if (w > 0.0) img(az, b) += weight * w * power;
  }
}

double falloff(double reflectivity, double range, const SensorConfig& s) {
  return reflectivity * std::min(1.0, s.reference_range / range);
}

}  // namespace

void WorldModel::validate() const {
  for (const Segment& s : segments) {
    check_unit(s.reflectivity, "segment");
    if (!s.a.allFinite() || !s.b.allFinite()) throw ConfigError("world: non-finite segment");
  }
  for (const PointReflector& p : points) {
    check_unit(p.reflectivity, "point");
    if (!p.position.allFinite()) throw ConfigError("world: non-finite point reflector");
  }
  for (const DynamicObject& d : dynamic) {
    check_unit(d.reflectivity, "dynamic object");
    if (!(d.radius > 0.0) || !d.position.allFinite() || !d.velocity.allFinite()) {
      throw ConfigError("world: dynamic objects need a positive radius and finite motion");
    }
  }
  if (!bounds_min.allFinite() || !bounds_max.allFinite() || (bounds_max.array() <= bounds_min.array()).any()) {
    throw ConfigError("world: bounds must be finite and non-empty");
  }
}

bool WorldModel::contains(const Eigen::Vector2d& p) const {
  return (p.array() >= bounds_min.array()).all() && (p.array() <= bounds_max.array()).all();
}

void SensorConfig::validate() const {
  if (n_azimuths < 4 || n_range_bins < 2) throw ConfigError("sensor: need at least 4 azimuths and 2 range bins");
  if (!(range_resolution > 0.0)) throw ConfigError("sensor: range_resolution must be positive");
  if (!(reference_range > 0.0)) throw ConfigError("sensor: reference_range must be positive");
  if (!(range_spread_bins >= 1.0)) throw ConfigError("sensor: range_spread_bins must be >= 1");
}

void NoiseConfig::validate() const {
  if (!(speckle_std >= 0.0) || !(saturation_level >= 0.0) || !(receiver_noise_floor >= 0.0) ||
      !(ghost_power >= 0.0)) {
    throw ConfigError("noise: parameters must be non-negative");
  }
  if (!(ghost_probability >= 0.0 && ghost_probability <= 1.0)) {
    throw ConfigError("noise: ghost_probability must be in [0, 1]");
  }
}

double LabelledScan::dynamic_fraction() const {
  const double dyn = dynamic_power.sum();
  const double total = dyn + static_power.sum();
  return total > 0.0 ? dyn / total : 0.0;
}

LabelledScan render_scan_labelled(const WorldModel& world, const Pose& sensor_pose, const SensorConfig& sensor,
                                  const NoiseConfig& noise, double time, std::uint64_t seed) {
  world.validate();
  sensor.validate();
  noise.validate();
  const Eigen::Vector2d origin(sensor_pose.dx, sensor_pose.dy);
  if (!world.contains(origin)) throw ConfigError("render_scan: sensor pose outside the world bounds");

  const int n_az = sensor.n_azimuths;
  const int n_bins = sensor.n_range_bins;
  const double step = 2.0 * pi / n_az;
  const double max_range = sensor.max_range();

  std::vector<Eigen::Vector2d> discs;
  for (const DynamicObject& d : world.dynamic) discs.push_back(d.position_at(time));

  LabelledScan out;
  out.static_power = Image::Zero(n_az, n_bins);
  out.dynamic_power = Image::Zero(n_az, n_bins);
  out.ghost_power = Image::Zero(n_az, n_bins);

  for (int a = 0; a < n_az; ++a) {
    const double phi = sensor_pose.dtheta + sensor.azimuth_0 + a * step;
    const Hit hit = cast_ray(world, discs, origin, {std::cos(phi), std::sin(phi)});
    if (hit.kind == HitKind::none || hit.range > max_range) continue;
    Image& target = hit.kind == HitKind::disc ? out.dynamic_power : out.static_power;
    deposit(target, a, hit.range, falloff(hit.power, hit.range, sensor), sensor);
  }

  for (const PointReflector& p : world.points) {
    const Eigen::Vector2d rel = p.position - origin;
    const double range = rel.norm();
    if (range < 1e-6 || range > max_range) continue;
    if (cast_ray(world, discs, origin, rel / range).range < range - 1e-6) continue;  // occluded
    double f = (std::atan2(rel.y(), rel.x()) - sensor_pose.dtheta - sensor.azimuth_0) / step;
    f = std::fmod(f, static_cast<double>(n_az));
    if (f < 0.0) f += n_az;
    const double lo = std::floor(f);
    const double frac = f - lo;
    const auto a0 = static_cast<Eigen::Index>(lo) % n_az;
    const double power = falloff(p.reflectivity, range, sensor);
    deposit(out.static_power, a0, range, power, sensor, 1.0 - frac);
    if (frac > 0.0) deposit(out.static_power, (a0 + 1) % n_az, range, power, sensor, frac);
  }

  Image power = out.static_power + out.dynamic_power;
  std::mt19937_64 rng(seed);
  if (noise.speckle_std > 0.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (Eigen::Index i = 0; i < power.size(); ++i) {
      power.data()[i] *= std::max(0.0, 1.0 + noise.speckle_std * n01(rng));
    }
  }
  if (noise.receiver_noise_floor > 0.0) {
    std::exponential_distribution<double> floor_noise(1.0 / noise.receiver_noise_floor);
    for (Eigen::Index i = 0; i < power.size(); ++i) power.data()[i] += floor_noise(rng);
  }
  if (noise.ghost_probability > 0.0 && noise.ghost_power > 0.0) {
    std::bernoulli_distribution has_ghost(noise.ghost_probability);
    std::uniform_int_distribution<int> start(0, n_bins - 1), length(4, 16);
    std::uniform_real_distribution<double> amplitude(0.5, 1.0);
    for (int a = 0; a < n_az; ++a) {
      if (!has_ghost(rng)) continue;
      const int b0 = start(rng);
      const int len = length(rng);
      const double amp = amplitude(rng) * noise.ghost_power;
      for (int b = b0; b < std::min(n_bins, b0 + len); ++b) out.ghost_power(a, b) += amp;
    }
    power += out.ghost_power;
  }
  power = power.min(noise.saturation_level).max(0.0).min(1.0);

  out.scan.power = std::move(power);
  out.scan.range_resolution = sensor.range_resolution;
  out.scan.azimuth_0 = sensor.azimuth_0;
  return out;
}

PolarScan render_scan(const WorldModel& world, const Pose& sensor_pose, const SensorConfig& sensor,
                      const NoiseConfig& noise, double time, std::uint64_t seed) {
  return render_scan_labelled(world, sensor_pose, sensor, noise, time, seed).scan;
}

std::vector<Pose> SimulatedSequence::relative() const { return relative_poses(poses); }

SimulatedSequence generate_sequence(const WorldModel& world, const TrajectorySpec& spec, const SensorConfig& sensor,
                                    const NoiseConfig& noise, const SearchRegion& region, std::uint64_t seed) {
  if (spec.n_frames < 1) throw ConfigError("generate_sequence: n_frames must be >= 1");
  if (!(spec.frame_period > 0.0)) throw ConfigError("generate_sequence: frame_period must be positive");
  region.validate();

  SimulatedSequence seq;
  std::mt19937_64 rng(sub_seed(seed, "trajectory"));
  std::normal_distribution<double> n01(0.0, 1.0);
  const double T = spec.frame_period;
  const double margin = 0.9;
  seq.times.push_back(0.0);
  seq.poses.push_back(spec.start);
  for (int f = 1; f < spec.n_frames; ++f) {
    const double v = spec.speed + spec.speed_jitter * n01(rng);
    const double w = spec.yaw_rate + spec.yaw_jitter * n01(rng);
    const double dtheta = std::clamp(w * T, margin * region.theta.min, margin * region.theta.max);
    const double ds = v * T;
    const double dx = std::clamp(ds * std::cos(0.5 * dtheta), margin * region.x.min, margin * region.x.max);
    const double dy = std::clamp(ds * std::sin(0.5 * dtheta), margin * region.y.min, margin * region.y.max);
    seq.times.push_back(f * T);
    seq.poses.push_back(compose(seq.poses.back(), Pose(dx, dy, dtheta)));
  }
  for (const Pose& p : seq.poses) {
    if (!world.contains({p.dx, p.dy})) throw ConfigError("generate_sequence: trajectory leaves the world bounds");
  }

  seq.scans.resize(seq.poses.size());
  seq.dynamic_fraction.resize(seq.poses.size());
  parallel_for(static_cast<int>(seq.poses.size()), [&](int f) {
    LabelledScan s = render_scan_labelled(world, seq.poses[f], sensor, noise, seq.times[f],
                                          indexed_seed(seed, static_cast<std::uint64_t>(f)));
    seq.dynamic_fraction[f] = s.dynamic_fraction();
    seq.scans[f] = std::move(s.scan);
  });
  return seq;
}

Dataset make_training_pairs(const SimulatedSequence& seq, const CartesianLayout& layout) {
  Dataset out;
  std::vector<CartesianScan> cart;
  for (const PolarScan& s : seq.scans) {
    cart.push_back(polar_to_cartesian(s, layout.width, layout.height, layout.meters_per_pixel));
  }
  for (std::size_t i = 0; i + 1 < seq.scans.size(); ++i) {
    TrainingSample s;
    s.z1 = cart[i + 1];
    s.z2 = cart[i];
    s.p1 = seq.scans[i + 1];
    s.p2 = seq.scans[i];
    s.pose_gt = compose(inverse(seq.poses[i]), seq.poses[i + 1]);
    out.push_back(std::move(s));
  }
  return out;
}

Image generate_static_labels(std::span<const CartesianScan> scans, std::span<const Pose> poses,
                             double power_threshold, int min_count) {
  if (scans.size() != poses.size()) throw DataError("static labels: one pose per scan required");
  if (min_count < 0) throw ConfigError("static labels: min_count must be non-negative");
  if (scans.size() < static_cast<std::size_t>(std::max(min_count, 1))) {
    throw ConfigError("static labels: need at least min_count scans");
  }
  if (!(power_threshold > 0.0 && power_threshold < 1.0)) {
    throw ConfigError("static labels: power_threshold must be in (0, 1)");
  }
  Eigen::ArrayXXi count = Eigen::ArrayXXi::Zero(scans[0].width(), scans[0].height());
  for (std::size_t i = 0; i < scans.size(); ++i) {
    if (scans[i].width() != count.rows() || scans[i].height() != count.cols()) {
      throw ShapeError("static labels: scans differ in shape");
    }
    count += (warp_scan(scans[i], poses[i]).power > power_threshold).cast<int>();
  }
  return (count > min_count).cast<double>();
}

std::vector<Image> sequence_static_labels(std::span<const CartesianScan> scans, std::span<const Pose> poses,
                                          double radius, double power_threshold, int min_count) {
  if (scans.size() != poses.size()) throw DataError("static labels: one pose per scan required");
  std::vector<Image> labels(scans.size());
  parallel_for(static_cast<int>(scans.size()), [&](int t) {
    std::vector<CartesianScan> near;
    std::vector<Pose> rel;
    const Pose inv_t = inverse(poses[t]);
    for (std::size_t j = 0; j < scans.size(); ++j) {
      if (std::hypot(poses[j].dx - poses[t].dx, poses[j].dy - poses[t].dy) > radius) continue;
      near.push_back(scans[j]);
      rel.push_back(compose(inv_t, poses[j]));
    }
    if (static_cast<int>(near.size()) <= min_count) {
      labels[t] = Image::Zero(scans[t].width(), scans[t].height());
    } else {
      labels[t] = generate_static_labels(near, rel, power_threshold, min_count);
    }
  });
  return labels;
}

namespace {

double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d e = b - a;
  const double t = std::clamp((p - a).dot(e) / std::max(e.squaredNorm(), 1e-12), 0.0, 1.0);
  return (a + t * e - p).norm();
}

}  // namespace

Scenario make_scenario(const ScenarioSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  std::normal_distribution<double> n01(0.0, 1.0);

  Scenario sc;
  sc.trajectory = spec.trajectory;
  sc.trajectory.yaw_rate = uniform(-spec.yaw_rate_max, spec.yaw_rate_max);
  sc.trajectory.start = Pose(0.0, 0.0, uniform(-pi, pi));

  // Nominal path (no jitter) for placing structure.
  std::vector<Eigen::Vector2d> path;
  Pose p = sc.trajectory.start;
  const double T = sc.trajectory.frame_period;
  for (int f = 0; f < sc.trajectory.n_frames; ++f) {
    path.emplace_back(p.dx, p.dy);
    const double dth = sc.trajectory.yaw_rate * T;
    const double ds = sc.trajectory.speed * T;
    p = compose(p, Pose(ds * std::cos(0.5 * dth), ds * std::sin(0.5 * dth), dth));
  }
  auto clear_of_path = [&](auto&& distance) {
    for (const Eigen::Vector2d& q : path) {
      if (distance(q) < spec.clearance) return false;
    }
    return true;
  };
  auto near_path = [&]() {
    const Eigen::Vector2d& base = path[static_cast<std::size_t>(u01(rng) * path.size()) % path.size()];
    return Eigen::Vector2d(base.x() + uniform(-18.0, 18.0), base.y() + uniform(-18.0, 18.0));
  };

  WorldModel& w = sc.world;
  w.seed = seed;
  w.bounds_min = path.front();
  w.bounds_max = path.front();
  for (const Eigen::Vector2d& q : path) {
    w.bounds_min = w.bounds_min.cwiseMin(q);
    w.bounds_max = w.bounds_max.cwiseMax(q);
  }
  w.bounds_min.array() -= spec.half_extent;
  w.bounds_max.array() += spec.half_extent;

  for (int tries = 0; static_cast<int>(w.segments.size()) < spec.n_segments && tries < spec.n_segments * 50; ++tries) {
    const Eigen::Vector2d c = near_path();
    const double len = uniform(spec.segment_min_length, spec.segment_max_length);
    const double ang = uniform(0.0, pi);
    const Eigen::Vector2d half = 0.5 * len * Eigen::Vector2d(std::cos(ang), std::sin(ang));
    Segment s{c - half, c + half, uniform(spec.static_reflectivity_min, spec.static_reflectivity_max)};
    if (clear_of_path([&](const Eigen::Vector2d& q) { return point_segment_distance(q, s.a, s.b); })) {
      w.segments.push_back(s);
    }
  }
  for (int tries = 0; static_cast<int>(w.points.size()) < spec.n_points && tries < spec.n_points * 50; ++tries) {
    PointReflector pr{near_path(), uniform(spec.static_reflectivity_min, spec.static_reflectivity_max)};
    if (clear_of_path([&](const Eigen::Vector2d& q) { return (q - pr.position).norm(); })) w.points.push_back(pr);
  }

  const Pose& s0 = sc.trajectory.start;
  const Eigen::Vector2d ego_velocity = sc.trajectory.speed * Eigen::Vector2d(std::cos(s0.dtheta), std::sin(s0.dtheta));
  for (int i = 0; i < spec.n_distractors; ++i) {
    DynamicObject d;
    const double r = uniform(spec.distractor_min_distance, spec.distractor_max_distance);
    const double bearing = uniform(-pi, pi);
    d.position = Eigen::Vector2d(s0.dx, s0.dy) + r * Eigen::Vector2d(std::cos(bearing), std::sin(bearing));
    d.velocity = ego_velocity + spec.distractor_velocity_std * Eigen::Vector2d(n01(rng), n01(rng));
    d.radius = uniform(spec.distractor_radius_min, spec.distractor_radius_max);
    d.reflectivity = spec.distractor_reflectivity;
    w.dynamic.push_back(d);
  }
  w.validate();
  return sc;
}

}  // namespace rcsm
