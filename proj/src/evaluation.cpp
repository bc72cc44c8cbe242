#include "rcsm/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "json.hpp"

#include "rcsm/detail/text_io.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/parallel.hpp"

namespace rcsm {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile: q must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void KittiConfig::validate() const {
  if (start_stride < 1) throw ConfigError("kitti: start_stride must be >= 1");
  for (double l : segment_lengths) {
    if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("kitti: segment lengths must be positive");
  }
}

namespace {

std::vector<double> path_distances(std::span<const Pose> abs) {
  std::vector<double> d(abs.size(), 0.0);
  for (std::size_t i = 1; i < abs.size(); ++i) {
    d[i] = d[i - 1] + std::hypot(abs[i].dx - abs[i - 1].dx, abs[i].dy - abs[i - 1].dy);
  }
  return d;
}

// inverse(a) * b, written so that a == b gives exactly the identity.
Pose between(const Pose& a, const Pose& b) {
  const double c = std::cos(a.dtheta), s = std::sin(a.dtheta);
  const double tx = b.dx - a.dx, ty = b.dy - a.dy;
  return {c * tx + s * ty, -s * tx + c * ty, b.dtheta - a.dtheta};
}

struct SegmentResult {
  std::size_t length_index;
  double trans_pct;
  double rot_deg_per_m;
};

}  // namespace

std::vector<double> default_segment_lengths(std::span<const Pose> gt_abs) {
  const std::vector<double> d = path_distances(gt_abs);
  const double total = d.empty() ? 0.0 : d.back();
  std::vector<double> lengths;
  if (!(total > 0.0)) return lengths;
  for (int k = 1; k <= 8; ++k) lengths.push_back(total * k / 10.0);
  return lengths;
}

OdometryReport kitti_errors(std::span<const Pose> est_abs, std::span<const Pose> gt_abs, const KittiConfig& cfg) {
  cfg.validate();
  if (est_abs.size() != gt_abs.size()) throw DataError("kitti: trajectories differ in length");
  const std::vector<double> lengths =
      cfg.segment_lengths.empty() ? default_segment_lengths(gt_abs) : cfg.segment_lengths;
  const std::vector<double> dist = path_distances(gt_abs);

  OdometryReport report;
  report.weight_by_count = cfg.weight_by_count;
  const int n = static_cast<int>(gt_abs.size());
  const int n_starts = n == 0 ? 0 : (n - 1) / cfg.start_stride + 1;

  std::vector<std::vector<SegmentResult>> per_start(static_cast<std::size_t>(n_starts));
  parallel_for(n_starts, [&](int s) {
    const int i = s * cfg.start_stride;
    auto& out = per_start[static_cast<std::size_t>(s)];
    for (std::size_t l = 0; l < lengths.size(); ++l) {
      const auto end = std::lower_bound(dist.begin() + i, dist.end(), dist[i] + lengths[l]);
      if (end == dist.end()) continue;
      const auto j = static_cast<std::size_t>(end - dist.begin());
      const Pose err = between(between(est_abs[i], est_abs[j]), between(gt_abs[i], gt_abs[j]));
      out.push_back({l, 100.0 * std::hypot(err.dx, err.dy) / lengths[l],
                     std::abs(wrap_angle(err.dtheta)) * 180.0 / std::numbers::pi / lengths[l]});
    }
  });

  std::vector<double> trans, rot;
  std::vector<SegmentErrors> by_length(lengths.size());
  for (std::size_t l = 0; l < lengths.size(); ++l) by_length[l].length = lengths[l];
  for (const auto& segs : per_start) {
    for (const SegmentResult& r : segs) {
      SegmentErrors& b = by_length[r.length_index];
      ++b.count;
      b.trans_pct += r.trans_pct;
      b.rot_deg_per_m += r.rot_deg_per_m;
      trans.push_back(r.trans_pct);
      rot.push_back(r.rot_deg_per_m);
    }
  }
  if (trans.empty()) {
    report.per_length = std::move(by_length);
    return report;
  }

  double weight_sum = 0.0;
  for (SegmentErrors& b : by_length) {
    if (b.count == 0) continue;
    const double w = cfg.weight_by_count ? static_cast<double>(b.count) : 1.0;
    report.trans_pct_mean += w * (b.trans_pct / static_cast<double>(b.count));
    report.rot_deg_per_m_mean += w * (b.rot_deg_per_m / static_cast<double>(b.count));
    weight_sum += w;
    b.trans_pct /= static_cast<double>(b.count);
    b.rot_deg_per_m /= static_cast<double>(b.count);
  }
  report.trans_pct_mean /= weight_sum;
  report.rot_deg_per_m_mean /= weight_sum;
  report.trans_pct_iqr = interquartile_range(trans);
  report.rot_deg_per_m_iqr = interquartile_range(rot);
  report.n_segments = trans.size();
  report.per_length = std::move(by_length);
  report.empty = false;
  return report;
}

OdometryReport kitti_errors(const Trajectory& est, const Trajectory& gt, const KittiConfig& cfg) {
  est.validate();
  gt.validate();
  if (est.size() != gt.size()) throw DataError("kitti: trajectories differ in length");
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (std::abs(est.times[i] - gt.times[i]) > 1e-6) throw DataError("kitti: timestamps are not aligned");
  }
  return kitti_errors(integrate(est.rel), integrate(gt.rel), cfg);
}

TimingStats benchmark(const std::function<void()>& fn, int repetitions, int warmup) {
  if (repetitions < 1) throw ConfigError("benchmark: repetitions must be >= 1");
  if (warmup < 0) throw ConfigError("benchmark: warmup must be >= 0");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> t(static_cast<std::size_t>(repetitions));
  for (double& s : t) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  TimingStats out;
  out.repetitions = repetitions;
  out.mean = std::accumulate(t.begin(), t.end(), 0.0) / repetitions;
  if (repetitions > 1) {
    double ss = 0.0;
    for (double s : t) ss += (s - out.mean) * (s - out.mean);
    out.std = std::sqrt(ss / (repetitions - 1));
  }
  return out;
}

namespace {

class ThreadCapGuard {
 public:
  explicit ThreadCapGuard(int n) : previous_(max_threads()) { set_max_threads(n); }
  ~ThreadCapGuard() { set_max_threads(previous_); }
  ThreadCapGuard(const ThreadCapGuard&) = delete;
  ThreadCapGuard& operator=(const ThreadCapGuard&) = delete;

 private:
  int previous_;
};

}  // namespace

TimingStats benchmark_matching(std::span<const TrainingSample> pairs, const MaskNet* net, const PoseGrid& grid,
                               const CartesianLayout& layout, double beta, const BenchmarkConfig& cfg) {
  if (pairs.empty()) throw DataError("benchmark: no scan pairs");
  if (cfg.threads < 1) throw ConfigError("benchmark: threads must be >= 1");
  ThreadCapGuard guard(cfg.threads);
  volatile double sink = 0.0;
  TimingStats t = benchmark(
      [&] {
        for (const TrainingSample& s : pairs) {
          sink = sink + estimate_pose(masked_correlation(s, net, grid, layout), beta).mean.dx;
        }
      },
      cfg.repetitions, cfg.warmup);
  const double n = static_cast<double>(pairs.size());
  t.mean /= n;
  t.std /= n;
  return t;
}

void SweepConfig::validate() const {
  region.validate();
  if (!(delta_theta > 0.0)) throw ConfigError("sweep: delta_theta must be positive");
  if (!(extent > 0.0)) throw ConfigError("sweep: extent must be positive");
  if (!(beta > 0.0)) throw ConfigError("sweep: beta must be positive");
  if (timing.repetitions < 0) throw ConfigError("sweep: repetitions must be non-negative");
}

std::vector<SweepRow> sweep_resolution(std::span<const TrainingSample> pairs, std::span<const double> resolutions,
                                       const SweepConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw DataError("sweep: no scan pairs");
  std::vector<SweepRow> rows;
  for (double delta : resolutions) {
    if (!(delta > 0.0)) throw ConfigError("sweep: resolutions must be positive");
    const PoseGrid grid = make_pose_grid(cfg.region, {delta, delta, cfg.delta_theta});
    const int side = std::max(2, static_cast<int>(std::lround(cfg.extent / delta)));
    const CartesianLayout layout{side, side, delta};

    SweepRow row;
    row.resolution = delta;
    std::vector<Pose> est(pairs.size());
    {
      ThreadCapGuard guard(cfg.timing.threads);
      parallel_for(static_cast<int>(pairs.size()), [&](int i) {
        est[static_cast<std::size_t>(i)] =
            estimate_pose(masked_correlation(pairs[static_cast<std::size_t>(i)], nullptr, grid, layout), cfg.beta).mean;
      });
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const Vector3 r = pose_residual(est[i], pairs[i].pose_gt);
      row.trans_error_m += std::hypot(r[0], r[1]);
      row.rot_error_rad += std::abs(r[2]);
    }
    row.trans_error_m /= static_cast<double>(pairs.size());
    row.rot_error_rad /= static_cast<double>(pairs.size());
    if (cfg.timing.repetitions > 0) {
      row.runtime = benchmark_matching(pairs, nullptr, grid, layout, cfg.beta, cfg.timing);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::string out = "resolution,trans_error_m,rot_error_rad,runtime_mean_s,runtime_std_s\n";
  for (const SweepRow& r : rows) {
    out += detail::format_double(r.resolution) + ',' + detail::format_double(r.trans_error_m) + ',' +
           detail::format_double(r.rot_error_rad) + ',';
    out += r.runtime ? detail::format_double(r.runtime->mean) + ',' + detail::format_double(r.runtime->std) : ",";
    out += '\n';
  }
  detail::write_text_file(path, out);
}

namespace {

constexpr const char* kTrajectoryHeader = "t,dx,dy,dtheta,c00,c01,c02,c11,c12,c22";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != cell.size()) {
    throw DataError("trajectory csv line " + std::to_string(line_no) + ": bad number '" + cell + "'");
  }
  return v;
}

}  // namespace

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  traj.validate();
  std::string out = std::string(kTrajectoryHeader) + '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose& p = traj.rel[i];
    out += detail::format_double(traj.times[i]) + ',' + detail::format_double(p.dx) + ',' +
           detail::format_double(p.dy) + ',' + detail::format_double(p.dtheta);
    if (traj.covariances.empty()) {
      out += ",,,,,,";
    } else {
      const Matrix3& c = traj.covariances[i];
      for (const double v : {c(0, 0), c(0, 1), c(0, 2), c(1, 1), c(1, 2), c(2, 2)}) out += ',' + detail::format_double(v);
    }
    out += '\n';
  }
  detail::write_text_file(path, out);
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::stringstream in(detail::read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kTrajectoryHeader) {
    throw DataError("trajectory csv: missing header '" + std::string(kTrajectoryHeader) + "' in " + path.string());
  }
  Trajectory traj;
  std::size_t line_no = 1;
  std::optional<bool> with_cov;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != 10) throw DataError("trajectory csv line " + std::to_string(line_no) + ": expected 10 columns");
    traj.times.push_back(parse_cell(cells[0], line_no));
    traj.rel.emplace_back(parse_cell(cells[1], line_no), parse_cell(cells[2], line_no), parse_cell(cells[3], line_no));
    const bool has = std::any_of(cells.begin() + 4, cells.end(), [](const std::string& c) { return !c.empty(); });
    if (with_cov && *with_cov != has) {
      throw DataError("trajectory csv line " + std::to_string(line_no) + ": covariance columns present on some rows only");
    }
    with_cov = has;
    if (has) {
      double v[6];
      for (int k = 0; k < 6; ++k) v[k] = parse_cell(cells[4 + k], line_no);
      Matrix3 c;
      c << v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5];
      traj.covariances.push_back(c);
    }
  }
  traj.validate();
  return traj;
}

void write_report_json(const std::filesystem::path& path, const OdometryReport& report) {
  nlohmann::ordered_json j;
  j["empty"] = report.empty;
  j["trans_error_pct_mean"] = report.trans_pct_mean;
  j["trans_error_pct_iqr"] = report.trans_pct_iqr;
  j["rot_error_deg_per_m_mean"] = report.rot_deg_per_m_mean;
  j["rot_error_deg_per_m_iqr"] = report.rot_deg_per_m_iqr;
  j["n_segments"] = report.n_segments;
  j["averaging"] = report.weight_by_count ? "segment_count" : "length";
  nlohmann::ordered_json segs = nlohmann::ordered_json::array();
  for (const SegmentErrors& s : report.per_length) {
    nlohmann::ordered_json e;
    e["length_m"] = s.length;
    e["count"] = s.count;
    e["trans_error_pct"] = s.trans_pct;
    e["rot_error_deg_per_m"] = s.rot_deg_per_m;
    segs.push_back(e);
  }
  j["per_length"] = segs;
  if (report.runtime) {
    j["runtime_mean_s"] = report.runtime->mean;
    j["runtime_std_s"] = report.runtime->std;
  } else {
    j["runtime_mean_s"] = nullptr;
    j["runtime_std_s"] = nullptr;
  }
  detail::write_text_file(path, j.dump(2) + "\n");
}

}  // namespace rcsm
