#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "rcsm/errors.hpp"
#include "rcsm/pose_estimation.hpp"
#include "test_support.hpp"

namespace rcsm {
namespace {

CorrelationVolume volume_on(const PoseGrid& g, const Eigen::ArrayXd& values) {
  CorrelationVolume c{g, Volume(g.nx(), g.ny(), g.ntheta())};
  c.scores.values() = values;
  return c;
}

PoseGrid grid_335() { return make_pose_grid(SearchRegion::symmetric(1, 1, 0.2), {1, 1, 0.1}); }

TEST(SoftArgmax, OneHotWithLargeBetaIsExact) {
  const PoseGrid g = grid_335();
  CorrelationVolume c = volume_on(g, Eigen::ArrayXd::Zero(g.size()));
  c.scores(2, 0, 3) = 1.0;
  const SoftArgmax s = soft_argmax(g, c, 1e4);
  EXPECT_NEAR(s.pose.dx, 1.0, 1e-12);
  EXPECT_NEAR(s.pose.dy, -1.0, 1e-12);
  EXPECT_NEAR(s.pose.dtheta, 0.1, 1e-12);
}

TEST(SoftArgmax, ConstantVolumeGivesGridCentroid) {
  const PoseGrid g = grid_335();
  const SoftArgmax s = soft_argmax(g, volume_on(g, Eigen::ArrayXd::Constant(g.size(), 3.0)), 1.0);
  EXPECT_NEAR(s.pose.dx, 0.0, 1e-15);
  EXPECT_NEAR(s.pose.dy, 0.0, 1e-15);
  EXPECT_NEAR(s.pose.dtheta, 0.0, 1e-15);
}

TEST(SoftArgmax, OneDimensionalToy) {
  Eigen::VectorXd xs(3);
  xs << -1, 0, 1;
  const PoseGrid g = PoseGrid::from_axes(xs, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  Eigen::ArrayXd v(3);
  v << 0, std::log(2.0), 0;
  const SoftArgmax s = soft_argmax(g, volume_on(g, v), 1.0);
  EXPECT_NEAR(s.weights.omega(0, 0, 0), 0.25, 1e-15);
  EXPECT_NEAR(s.weights.omega(1, 0, 0), 0.5, 1e-15);
  EXPECT_NEAR(s.weights.omega(2, 0, 0), 0.25, 1e-15);
  EXPECT_NEAR(s.pose.dx, 0.0, 1e-15);
}

TEST(SoftArgmax, Properties) {
  std::mt19937_64 rng(5);
  const PoseGrid g = grid_335();
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::ArrayXd v = testing::flat(testing::random_image(1, g.size(), 500 + trial, -5, 5));
    const SoftArgmax a = soft_argmax(g, volume_on(g, v), 1.0);
    EXPECT_NEAR(a.weights.omega.values().sum(), 1.0, 1e-12);
    EXPECT_TRUE((a.weights.omega.values() >= 0).all());

    const SoftArgmax shifted = soft_argmax(g, volume_on(g, v + 17.0), 1.0);
    EXPECT_NEAR(shifted.pose.dx, a.pose.dx, 1e-12);
    EXPECT_NEAR(shifted.pose.dy, a.pose.dy, 1e-12);
    EXPECT_NEAR(shifted.pose.dtheta, a.pose.dtheta, 1e-12);

    double prev = 0.0;
    for (double beta : {0.1, 0.5, 1.0, 2.0, 8.0}) {
      const double top = soft_argmax(g, volume_on(g, v), beta).weights.omega.values().maxCoeff();
      EXPECT_GE(top, prev - 1e-15);
      prev = top;
    }

    Eigen::Index best = 0;
    v.maxCoeff(&best);
    const SoftArgmax hard = soft_argmax(g, volume_on(g, v), 1e4);
    const int i = static_cast<int>(best % g.nx()), j = static_cast<int>((best / g.nx()) % g.ny()),
              k = static_cast<int>(best / (g.nx() * g.ny()));
    EXPECT_NEAR(hard.pose.dx, g.xs[i], 1e-6);
    EXPECT_NEAR(hard.pose.dy, g.ys[j], 1e-6);
    EXPECT_NEAR(hard.pose.dtheta, g.thetas[k], 1e-6);
  }
}

TEST(SoftArgmax, Errors) {
  const PoseGrid g = grid_335();
  CorrelationVolume c = volume_on(g, Eigen::ArrayXd::Zero(g.size()));
  EXPECT_THROW(soft_argmax(g, c, 0.0), ConfigError);
  c.scores(0, 0, 0) = std::nan("");
  EXPECT_THROW(soft_argmax(g, c, 1.0), NumericError);
  const PoseGrid other = make_pose_grid(SearchRegion::symmetric(2, 1, 0.2), {1, 1, 0.1});
  EXPECT_THROW(soft_argmax(other, volume_on(g, Eigen::ArrayXd::Zero(g.size())), 1.0), ShapeError);
}

TEST(SoftArgmaxBackward, MatchesFiniteDifferences) {
  const PoseGrid g = grid_335();
  const Eigen::ArrayXd v = testing::flat(testing::random_image(1, g.size(), 77, -2, 2));
  const Vector3 up(0.3, -1.2, 2.0);
  for (double beta : {0.5, 3.0}) {
    auto loss = [&](const Eigen::ArrayXd& x) { return soft_argmax(g, volume_on(g, x), beta).pose.vector().dot(up); };
    const Eigen::ArrayXd fd = testing::finite_difference(loss, v, 1e-5);
    const SoftArgmax s = soft_argmax(g, volume_on(g, v), beta);
    const Volume analytic = soft_argmax_backward(g, s.weights, beta, up);
    EXPECT_LT(testing::relative_error(fd, analytic.values()), 1e-4);
  }
}

TEST(Covariance, OneHotIsZero) {
  const PoseGrid g = grid_335();
  CorrelationVolume c = volume_on(g, Eigen::ArrayXd::Zero(g.size()));
  c.scores(1, 2, 4) = 1e3;
  const PoseEstimate e = estimate_pose(c, 1.0);
  EXPECT_LT(e.covariance.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariance, UniformOnThreePoints) {
  Eigen::VectorXd xs(3);
  xs << -1, 0, 1;
  const PoseGrid g = PoseGrid::from_axes(xs, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  const PoseEstimate e = estimate_pose(volume_on(g, Eigen::ArrayXd::Zero(3)), 1.0);
  EXPECT_NEAR(e.covariance(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(e.covariance(1, 1), 0.0, 1e-15);
}

TEST(Covariance, SymmetricWeightsHaveNoCrossTerms) {
  const PoseGrid g = grid_335();
  CorrelationVolume c = volume_on(g, Eigen::ArrayXd::Zero(g.size()));
  for (int k = 0; k < g.ntheta(); ++k) {
    for (int j = 0; j < g.ny(); ++j) {
      for (int i = 0; i < g.nx(); ++i) {
        c.scores(i, j, k) = -(0.7 * g.xs[i] * g.xs[i] + 1.3 * g.ys[j] * g.ys[j] + 40 * g.thetas[k] * g.thetas[k]);
      }
    }
  }
  const PoseEstimate e = estimate_pose(c, 1.0);
  EXPECT_NEAR(e.covariance(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(e.covariance(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(e.covariance(1, 2), 0.0, 1e-15);
}

TEST(Covariance, PositiveSemiDefiniteOnRandomVolumes) {
  const PoseGrid g = make_pose_grid(SearchRegion::symmetric(3, 3, 0.3), {0.5, 0.5, 0.05});
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::ArrayXd v = testing::flat(testing::random_image(1, g.size(), 9000 + trial, -30, 30));
    const PoseEstimate e = estimate_pose(volume_on(g, v), 1.0);
    EXPECT_TRUE(e.covariance.isApprox(e.covariance.transpose(), 0.0));
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix3>(e.covariance).eigenvalues().minCoeff(), -1e-15);
    EXPECT_LT(e.covariance_clamp, 1e-8);
  }
}

TEST(Match, IdenticalScansGiveIdentity) {
  const CartesianScan s = CartesianScan::centered(testing::blob_image(48, 48, 12, 8), 0.5);
  const PoseGrid g = make_pose_grid(SearchRegion::symmetric(3, 3, 0.2), {0.5, 0.5, 0.05});
  const PoseEstimate e = match(s, s, nullptr, g, 50.0);
  EXPECT_LT(std::hypot(e.mean.dx, e.mean.dy), 1e-3);
  EXPECT_LT(std::abs(e.mean.dtheta), 1e-3);
}

TEST(Match, WarpedScanRecoveredWithinHalfCell) {
  const CartesianScan s1 = CartesianScan::centered(testing::blob_image(64, 64, 13, 12, 1.2), 0.5);
  const PoseGrid g = make_pose_grid(SearchRegion::symmetric(3, 3, 0.2), {0.5, 0.5, 0.05});
  for (const Pose& p : {Pose(1.0, -0.5, 0.05), Pose(-1.5, 2.0, -0.1)}) {
    const CartesianScan s2 = warp_scan(s1, p);
    const PoseEstimate e = match(s1, s2, nullptr, g, 50.0);
    EXPECT_LT(std::abs(e.mean.dx - p.dx), 0.25);
    EXPECT_LT(std::abs(e.mean.dy - p.dy), 0.25);
    EXPECT_LT(std::abs(e.mean.dtheta - p.dtheta), 0.025);
  }
}

TEST(Match, NetworkFrameMismatchRejected) {
  MaskNetConfig cfg;
  cfg.input_frame = InputFrame::polar;
  const MaskNet net(cfg);
  const CartesianScan s = CartesianScan::centered(Image::Zero(16, 16), 1.0);
  EXPECT_THROW(match(s, s, &net, make_pose_grid(SearchRegion::symmetric(2, 2, 0.1), {1, 1, 0.1})), ConfigError);
}

TEST(MatchBackward, MatchesFiniteDifferences) {
  const PoseGrid g = make_pose_grid(SearchRegion::symmetric(2, 2, 0.1), {1, 1, 0.1});  // 5 x 5 x 3
  const Image a = testing::random_image(8, 8, 41), b = testing::random_image(8, 8, 42);
  const Vector3 up(1.0, -0.5, 3.0);
  const double beta = 0.7;
  auto loss = [&](const Image& x, const Image& y) {
    const CorrelationVolume c = correlate_fft(g, CartesianScan::centered(x, 1.0), CartesianScan::centered(y, 1.0));
    return soft_argmax(g, c, beta).pose.vector().dot(up);
  };
  const Eigen::ArrayXd fd1 = testing::finite_difference(
      [&](const Eigen::ArrayXd& v) { return loss(testing::unflat(v, 8, 8), b); }, testing::flat(a), 1e-4);
  const Eigen::ArrayXd fd2 = testing::finite_difference(
      [&](const Eigen::ArrayXd& v) { return loss(a, testing::unflat(v, 8, 8)); }, testing::flat(b), 1e-4);
  const MatchGradients grad = match_backward(g, CartesianScan::centered(a, 1.0), CartesianScan::centered(b, 1.0), beta, up);
  EXPECT_LT(testing::relative_error(fd1, testing::flat(grad.s1)), 1e-4);
  EXPECT_LT(testing::relative_error(fd2, testing::flat(grad.s2)), 1e-4);
}

}  // namespace
}  // namespace rcsm
