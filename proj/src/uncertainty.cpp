#include "rcsm/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <boost/math/distributions/normal.hpp>

#include "json.hpp"

#include "rcsm/detail/text_io.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/parallel.hpp"

namespace rcsm {

namespace {

constexpr double kInitialRidge = 1e-9;
constexpr double kDegenerateRidge = 1e-6;

}  // namespace

Mahalanobis mahalanobis(const Pose& gt, const PoseEstimate& est) {
  const Vector3 r = pose_residual(gt, est.mean);
  if (!r.allFinite() || !est.covariance.allFinite()) throw NumericError("mahalanobis: non-finite input");
  Mahalanobis out;
  for (double lambda = kInitialRidge; lambda < 1e6; lambda *= 10.0) {
    const Eigen::LLT<Matrix3> llt(est.covariance + lambda * Matrix3::Identity());
    if (llt.info() != Eigen::Success) continue;
    out.lambda = lambda;
    out.d2 = r.dot(llt.solve(r));
    out.degenerate = lambda > kDegenerateRidge;
    return out;
  }
  throw NumericError("mahalanobis: covariance could not be regularised");
}

CalibrationSet collect_calibration_set(std::span<const TrainingSample> data, const MaskNet* net, const PoseGrid& grid,
                                       const CartesianLayout& layout, double beta0) {
  if (!(beta0 > 0.0)) throw ConfigError("calibration: beta0 must be positive");
  if (data.empty()) throw DataError("calibration: empty test set");
  CalibrationSet set;
  set.beta0 = beta0;
  set.samples.resize(data.size());
  parallel_for(static_cast<int>(data.size()), [&](int i) {
    CalibrationSample& s = set.samples[static_cast<std::size_t>(i)];
    s.volume = masked_correlation(data[static_cast<std::size_t>(i)], net, grid, layout);
    s.gt = data[static_cast<std::size_t>(i)].pose_gt;
    s.mean = soft_argmax(grid, s.volume, beta0).pose;
  });
  return set;
}

std::vector<PoseEstimate> estimates_at(const CalibrationSet& set, double beta) {
  if (!(beta > 0.0)) throw ConfigError("calibration: beta must be positive");
  std::vector<PoseEstimate> out(set.samples.size());
  parallel_for(static_cast<int>(out.size()), [&](int i) {
    const CalibrationSample& s = set.samples[static_cast<std::size_t>(i)];
    const SoftArgmax sa = soft_argmax(s.volume.grid, s.volume, beta);
    const Covariance cov = estimate_covariance(s.volume.grid, sa.weights, sa.pose);
    PoseEstimate& e = out[static_cast<std::size_t>(i)];
    e.mean = s.mean;
    e.covariance = cov.matrix;
    e.beta_used = beta;
    e.covariance_clamp = cov.clamp;
  });
  return out;
}

MeanMahalanobis mean_mahalanobis(const CalibrationSet& set, double beta) {
  if (set.samples.empty()) throw DataError("calibration: empty test set");
  const std::vector<PoseEstimate> est = estimates_at(set, beta);
  MeanMahalanobis out;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Mahalanobis m = mahalanobis(set.samples[i].gt, est[i]);
    out.value += m.d2;
    out.degenerate += m.degenerate ? 1 : 0;
  }
  out.value /= static_cast<double>(est.size());
  return out;
}

void CalibrationConfig::validate() const {
  if (!(beta_min > 0.0 && beta_max > beta_min)) throw ConfigError("calibration: need 0 < beta_min < beta_max");
  if (grid_points < 2) throw ConfigError("calibration: need at least two grid points");
  if (refine_iterations < 0) throw ConfigError("calibration: refine_iterations must be >= 0");
  if (!(target > 0.0)) throw ConfigError("calibration: target must be positive");
}

namespace {

CalibrationResult finish(const CalibrationSet& set, std::vector<std::pair<double, double>> sweep, double target) {
  std::sort(sweep.begin(), sweep.end());
  CalibrationResult r;
  r.sweep = std::move(sweep);
  r.n_samples = set.samples.size();
  const auto best = std::min_element(r.sweep.begin(), r.sweep.end(), [&](const auto& a, const auto& b) {
    return std::abs(a.second - target) < std::abs(b.second - target);
  });
  r.beta_star = best->first;
  r.mean_mahalanobis = best->second;
  r.degenerate = mean_mahalanobis(set, r.beta_star).degenerate;
  return r;
}

}  // namespace

CalibrationResult calibrate_beta(const CalibrationSet& set, std::span<const double> beta_grid, double target) {
  if (beta_grid.empty()) throw ConfigError("calibration: empty beta grid");
  for (std::size_t i = 0; i < beta_grid.size(); ++i) {
    if (!(beta_grid[i] > 0.0) || (i > 0 && !(beta_grid[i] > beta_grid[i - 1]))) {
      throw ConfigError("calibration: beta grid must be positive and strictly ascending");
    }
  }
  std::vector<std::pair<double, double>> sweep;
  for (double b : beta_grid) sweep.emplace_back(b, mean_mahalanobis(set, b).value);
  return finish(set, std::move(sweep), target);
}

CalibrationResult calibrate_beta(const CalibrationSet& set, const CalibrationConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<double, double>> sweep;
  const double l0 = std::log(cfg.beta_min), l1 = std::log(cfg.beta_max);
  for (int i = 0; i < cfg.grid_points; ++i) {
    const double b = std::exp(l0 + (l1 - l0) * i / (cfg.grid_points - 1));
    sweep.emplace_back(b, mean_mahalanobis(set, b).value);
  }
  // d^2 grows with beta, so the target is bracketed by the first crossing.
  for (std::size_t i = 0; i + 1 < sweep.size(); ++i) {
    const double lo_v = sweep[i].second - cfg.target, hi_v = sweep[i + 1].second - cfg.target;
    if (lo_v > 0.0 || hi_v < 0.0) continue;
    double a = std::log(sweep[i].first), b = std::log(sweep[i + 1].first);
    for (int it = 0; it < cfg.refine_iterations; ++it) {
      const double m = 0.5 * (a + b);
      const double v = mean_mahalanobis(set, std::exp(m)).value;
      sweep.emplace_back(std::exp(m), v);
      (v < cfg.target ? a : b) = m;
    }
    break;
  }
  return finish(set, std::move(sweep), cfg.target);
}

CoverageReport coverage_report(std::span<const Vector3> errors, std::span<const PoseEstimate> estimates,
                               double confidence) {
  if (errors.size() != estimates.size()) throw DataError("coverage: errors and estimates differ in length");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("coverage: confidence must be in (0, 1)");
  CoverageReport r;
  r.n = errors.size();
  r.z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * confidence);
  if (r.n == 0) return r;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double sigma = std::sqrt(std::max(0.0, estimates[i].covariance(c, c)));
      if (std::abs(errors[i][c]) <= r.z * sigma) r.fraction[c] += 1.0;
    }
  }
  r.fraction /= static_cast<double>(r.n);
  return r;
}

CoverageReport coverage_report(const CalibrationSet& set, double beta, double confidence) {
  const std::vector<PoseEstimate> est = estimates_at(set, beta);
  std::vector<Vector3> err;
  err.reserve(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) err.push_back(pose_residual(est[i].mean, set.samples[i].gt));
  return coverage_report(err, est, confidence);
}

void write_calibration_csv(const std::filesystem::path& path, const CalibrationResult& result) {
  std::string out = "beta,mean_mahalanobis\n";
  for (const auto& [b, d] : result.sweep) out += detail::format_double(b) + ',' + detail::format_double(d) + '\n';
  detail::write_text_file(path, out);
}

void write_calibration_json(const std::filesystem::path& path, const CalibrationResult& result) {
  nlohmann::ordered_json j;
  j["beta_star"] = result.beta_star;
  j["mean_mahalanobis"] = result.mean_mahalanobis;
  j["n_samples"] = result.n_samples;
  detail::write_text_file(path, j.dump(2) + "\n");
}

}  // namespace rcsm
