#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "json.hpp"

#include "calibration_fixture.hpp"
#include "rcsm/detail/text_io.hpp"
#include "rcsm/errors.hpp"
#include "rcsm/simworld.hpp"
#include "rcsm/uncertainty.hpp"
#include "test_support.hpp"

namespace rcsm {
namespace {

PoseEstimate estimate(const Pose& mean, const Matrix3& cov) {
  PoseEstimate e;
  e.mean = mean;
  e.covariance = cov;
  return e;
}

TEST(Mahalanobis, Examples) {
  EXPECT_EQ(mahalanobis_sq(Pose(1, 2, 0.3), estimate(Pose(1, 2, 0.3), Matrix3::Identity())), 0.0);
  EXPECT_NEAR(mahalanobis_sq(Pose(1, 1, 1), estimate(Pose(), Matrix3::Identity())), 3.0, 1e-8);
  Matrix3 d = Matrix3::Identity();
  d(0, 0) = 4;
  EXPECT_NEAR(mahalanobis_sq(Pose(2, 0, 0), estimate(Pose(), d)), 1.0, 1e-8);
}

TEST(Mahalanobis, WrapsAngularResidual) {
  const double d = 2 * std::numbers::pi - 6.2;
  EXPECT_NEAR(mahalanobis_sq(Pose(0, 0, 3.1), estimate(Pose(0, 0, -3.1), Matrix3::Identity())), d * d, 1e-8);
}

TEST(Mahalanobis, InvariantUnderConsistentRelabelling) {
  // Swapping x and y in both the residual and the covariance.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 50; ++t) {
    Matrix3 a;
    for (int i = 0; i < 9; ++i) a.data()[i] = n(rng);
    const Matrix3 cov = a * a.transpose() + 0.1 * Matrix3::Identity();
    Matrix3 p = Matrix3::Zero();
    p(0, 1) = p(1, 0) = p(2, 2) = 1;
    const Vector3 r(n(rng), n(rng), 0.3 * n(rng));
    const Vector3 rp = p * r;
    const double d1 = mahalanobis_sq(Pose(r[0], r[1], r[2]), estimate(Pose(), cov));
    const double d2 = mahalanobis_sq(Pose(rp[0], rp[1], rp[2]), estimate(Pose(), p * cov * p.transpose()));
    EXPECT_NEAR(d1, d2, 1e-9 * std::max(1.0, d1));
  }
}

TEST(Mahalanobis, RidgeIsNegligibleWhenWellConditioned) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 50; ++t) {
    Matrix3 a;
    for (int i = 0; i < 9; ++i) a.data()[i] = 0.1 * n(rng);
    const Matrix3 cov = a * a.transpose() + 1e-3 * Matrix3::Identity();
    const Vector3 r(n(rng), n(rng), n(rng));
    const Mahalanobis m = mahalanobis(Pose(r[0], r[1], r[2]), estimate(Pose(), cov));
    const double exact = r.dot(cov.inverse() * r);
    EXPECT_EQ(m.lambda, 1e-9);
    EXPECT_FALSE(m.degenerate);
    EXPECT_LT(std::abs(m.d2 - exact) / exact, 0.01);
  }
}

TEST(Mahalanobis, DegenerateCovarianceIsFlagged) {
  Matrix3 bad = Matrix3::Zero();
  bad(0, 0) = -1e-3;  // indefinite: needs lambda > 1e-3
  const Mahalanobis m = mahalanobis(Pose(1, 0, 0), estimate(Pose(), bad));
  EXPECT_TRUE(m.degenerate);
  EXPECT_GT(m.lambda, 1e-6);
  EXPECT_TRUE(std::isfinite(m.d2));

  // A rank-deficient but PSD covariance is still handled by the 1e-9 floor.
  const Mahalanobis z = mahalanobis(Pose(1e-5, 0, 0), estimate(Pose(), Matrix3::Zero()));
  EXPECT_EQ(z.lambda, 1e-9);
  EXPECT_NEAR(z.d2, 1e-10 / 1e-9, 1e-9);
}

TEST(Coverage, Examples) {
  const std::vector<PoseEstimate> est(4, estimate(Pose(), Matrix3::Identity()));
  const std::vector<Vector3> zero(4, Vector3::Zero());
  const CoverageReport c0 = coverage_report(zero, est, 0.95);
  EXPECT_TRUE((c0.fraction.array() == 1.0).all());
  EXPECT_NEAR(c0.z, 1.959963984540054, 1e-12);

  // Errors exactly at the bound are covered; just beyond are not.
  std::vector<Vector3> edge = {Vector3::Constant(c0.z), Vector3::Constant(-c0.z), Vector3::Constant(c0.z * 1.0001),
                               Vector3::Zero()};
  const CoverageReport ce = coverage_report(edge, est, 0.95);
  EXPECT_DOUBLE_EQ(ce.fraction[0], 0.75);
  EXPECT_DOUBLE_EQ(ce.fraction[2], 0.75);

  EXPECT_THROW(coverage_report(zero, std::span(est).first(3), 0.95), DataError);
  EXPECT_THROW(coverage_report(zero, est, 1.0), ConfigError);
}

class GaussianToy : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { set_ = new CalibrationSet(testing::gaussian_calibration_set(1000, 7, testing::toy_covariance())); }
  static void TearDownTestSuite() {
    delete set_;
    set_ = nullptr;
  }
  static CalibrationSet* set_;
};
CalibrationSet* GaussianToy::set_ = nullptr;

TEST_F(GaussianToy, CovarianceAtUnitBetaMatchesTheGaussian) {
  const std::vector<PoseEstimate> est = estimates_at(*set_, 1.0);
  EXPECT_LT((est[0].covariance - testing::toy_covariance()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(GaussianToy, CalibratedMeanNearThreeAndCoverageNearNominal) {
  const CalibrationResult r = calibrate_beta(*set_);
  EXPECT_GE(r.mean_mahalanobis, 2.8);
  EXPECT_LE(r.mean_mahalanobis, 3.2);
  EXPECT_NEAR(r.beta_star, 1.0, 0.15);
  EXPECT_EQ(r.n_samples, 1000u);
  const CoverageReport c = coverage_report(*set_, r.beta_star, 0.95);
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(c.fraction[i], 0.90);
    EXPECT_LE(c.fraction[i], 0.99);
  }
  // The sweep is ascending and the refinement landed inside the grid range.
  for (std::size_t i = 1; i < r.sweep.size(); ++i) EXPECT_GT(r.sweep[i].first, r.sweep[i - 1].first);
  EXPECT_GT(r.sweep.size(), 25u);
}

TEST_F(GaussianToy, MeanMahalanobisGrowsWithBeta) {
  const std::vector<double> betas = {0.2, 0.5, 1.0, 2.0, 5.0};
  const CalibrationResult r = calibrate_beta(*set_, betas);
  ASSERT_EQ(r.sweep.size(), 5u);
  for (std::size_t i = 1; i < r.sweep.size(); ++i) EXPECT_GT(r.sweep[i].second, r.sweep[i - 1].second);
  // Scaling beta scales the Gaussian covariance by 1/beta, so d^2 ~ beta
  // while the tempered Gaussian still fits inside the grid.
  EXPECT_NEAR(r.sweep[3].second / r.sweep[2].second, 2.0, 0.02);
}

TEST(Calibration, MonotoneOnMatcherVolumes) {
  WorldModel w;
  w.segments = {{{-12, -10}, {14, -10}, 0.5}, {{14, -10}, {14, 9}, 0.4}, {{14, 9}, {-12, 9}, 0.6},
                {{-12, 9}, {-12, -10}, 0.3}};
  w.points = {{{-4, 4}, 0.8}, {{7, -4}, 0.7}};
  w.dynamic = {{{2, -3}, {2, 1}, 1.0, 1.0}};
  TrajectorySpec spec;
  spec.n_frames = 7;
  spec.speed = 3.0;
  spec.yaw_rate = 0.1;
  spec.start = Pose(-3, 0, 0);
  const PoseGrid grid = make_pose_grid(SearchRegion::symmetric(2, 2, 0.2), {0.5, 0.5, 0.05});
  NoiseConfig noise;
  noise.speckle_std = 0.2;
  noise.ghost_probability = 0.05;
  const SimulatedSequence seq = generate_sequence(w, spec, SensorConfig{}, noise, grid.region, 3);
  const Dataset pairs = make_training_pairs(seq, CartesianLayout{64, 64, 0.5});
  const CalibrationSet set = collect_calibration_set(pairs, nullptr, grid, CartesianLayout{64, 64, 0.5}, 30.0);
  ASSERT_EQ(set.samples.size(), 6u);
  const CalibrationResult r = calibrate_beta(set, CalibrationConfig{0.1, 100.0, 15, 0});
  for (std::size_t i = 1; i < r.sweep.size(); ++i) EXPECT_GE(r.sweep[i].second, r.sweep[i - 1].second);
}

TEST(Calibration, Errors) {
  CalibrationSet empty;
  EXPECT_THROW(mean_mahalanobis(empty, 1.0), DataError);
  const CalibrationSet s = testing::gaussian_calibration_set(2, 1, testing::toy_covariance());
  const std::vector<double> desc = {2.0, 1.0};
  EXPECT_THROW(calibrate_beta(s, desc), ConfigError);
  EXPECT_THROW(calibrate_beta(s, CalibrationConfig{1.0, 0.5}), ConfigError);
  EXPECT_THROW(estimates_at(s, 0.0), ConfigError);
}

TEST(Calibration, ReportFiles) {
  testing::ScratchDir dir("calib");
  CalibrationResult r;
  r.beta_star = 2.5;
  r.mean_mahalanobis = 3.01;
  r.n_samples = 12;
  r.sweep = {{1.0, 1.5}, {2.5, 3.01}};
  write_calibration_csv(dir / "c.csv", r);
  write_calibration_json(dir / "c.json", r);
  EXPECT_EQ(detail::read_text_file(dir / "c.csv"), "beta,mean_mahalanobis\n1,1.5\n2.5,3.01\n");
  const auto j = nlohmann::json::parse(detail::read_text_file(dir / "c.json"));
  EXPECT_EQ(j.at("beta_star").get<double>(), 2.5);
  EXPECT_EQ(j.at("mean_mahalanobis").get<double>(), 3.01);
  EXPECT_EQ(j.at("n_samples").get<int>(), 12);
  EXPECT_EQ(j.size(), 3u);
}

}  // namespace
}  // namespace rcsm
