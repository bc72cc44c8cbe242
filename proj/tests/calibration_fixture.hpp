#pragma once

// Calibration sets whose correlation volumes are exact Gaussian
// log-likelihoods: C(x) = -1/2 (x - m)^T S^-1 (x - m). At beta = 1 the
// softmax is the (sampled) Gaussian itself, so d^2 of the mode against a
// ground truth drawn from N(m, S) follows chi-squared with 3 dof.

#include <random>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "rcsm/uncertainty.hpp"

namespace rcsm::testing {

inline CalibrationSet gaussian_calibration_set(int n, std::uint64_t seed, const Matrix3& sigma) {
  const Vector3 sd = sigma.diagonal().cwiseSqrt();
  // 21 samples per axis, 0.6 sd apart, so the grid spans +-6 sd.
  const auto axis = [](double s) { return Eigen::VectorXd::LinSpaced(21, -6.0 * s, 6.0 * s).eval(); };
  const PoseGrid grid = PoseGrid::from_axes(axis(sd[0]), axis(sd[1]), axis(sd[2]));
  const Matrix3 info = sigma.inverse();
  const Eigen::LLT<Matrix3> llt(sigma);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_int_distribution<int> offset(-2, 2);

  CalibrationSet set;
  set.beta0 = 1.0;
  for (int s = 0; s < n; ++s) {
    // Mode on a grid node near the centre, so truncation at the edges is
    // at least 4.8 sd away.
    const int oi = 10 + offset(rng), oj = 10 + offset(rng), ok = 10 + offset(rng);
    const Vector3 m(grid.xs[oi], grid.ys[oj], grid.thetas[ok]);
    CorrelationVolume c{grid, Volume(grid.nx(), grid.ny(), grid.ntheta())};
    for (int k = 0; k < grid.ntheta(); ++k) {
      for (int j = 0; j < grid.ny(); ++j) {
        for (int i = 0; i < grid.nx(); ++i) {
          const Vector3 d = Vector3(grid.xs[i], grid.ys[j], grid.thetas[k]) - m;
          c.scores(i, j, k) = -0.5 * d.dot(info * d);
        }
      }
    }
    const Vector3 e = llt.matrixL() * Vector3(n01(rng), n01(rng), n01(rng));
    CalibrationSample cs;
    cs.volume = std::move(c);
    cs.mean = soft_argmax(grid, cs.volume, set.beta0).pose;
    cs.gt = Pose(m[0] + e[0], m[1] + e[1], m[2] + e[2]);
    set.samples.push_back(std::move(cs));
  }
  return set;
}

inline Matrix3 toy_covariance() {
  Matrix3 s;
  s << 0.16, 0.036, 0.0,  //
      0.036, 0.09, 0.0,   //
      0.0, 0.0, 0.0025;
  return s;
}

}  // namespace rcsm::testing
