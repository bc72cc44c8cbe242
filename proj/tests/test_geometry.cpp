#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "rcsm/errors.hpp"
#include "rcsm/geometry.hpp"
#include "test_support.hpp"

namespace rcsm {
namespace {

using std::numbers::pi;

void expect_pose_near(const Pose& a, const Pose& b, double tol) {
  EXPECT_NEAR(a.dx, b.dx, tol);
  EXPECT_NEAR(a.dy, b.dy, tol);
  EXPECT_NEAR(wrap_angle(a.dtheta - b.dtheta), 0.0, tol);
}

TEST(Pose, ComposeWithIdentity) {
  const Pose p(1.5, -2.0, 0.3);
  expect_pose_near(compose(Pose::identity(), p), p, 0.0);
  expect_pose_near(compose(p, Pose::identity()), p, 0.0);
}

TEST(Pose, ComposeQuarterTurn) {
  // Rotation by pi/2 maps (1, 0) to (0, 1).
  expect_pose_near(compose(Pose(1, 0, pi / 2), Pose(1, 0, 0)), Pose(1, 1, pi / 2), 1e-15);
}

TEST(Pose, InverseExamples) {
  expect_pose_near(inverse(Pose::identity()), Pose::identity(), 0.0);
  expect_pose_near(inverse(Pose(1, 0, 0)), Pose(-1, 0, 0), 0.0);
  expect_pose_near(inverse(Pose(0, 0, 0.7)), Pose(0, 0, -0.7), 0.0);
}

TEST(Pose, GroupProperties) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> t(-20, 20), a(-4, 4);
  for (int n = 0; n < 1000; ++n) {
    const Pose p(t(rng), t(rng), a(rng)), q(t(rng), t(rng), a(rng)), r(t(rng), t(rng), a(rng));
    expect_pose_near(compose(p, inverse(p)), Pose::identity(), 1e-12);
    expect_pose_near(compose(inverse(p), p), Pose::identity(), 1e-12);
    expect_pose_near(compose(compose(p, q), r), compose(p, compose(q, r)), 1e-12);
    const Pose c = compose(p, q);
    EXPECT_GT(c.dtheta, -pi);
    EXPECT_LE(c.dtheta, pi);
  }
}

TEST(Pose, WrapAngleRange) {
  EXPECT_DOUBLE_EQ(wrap_angle(pi), pi);
  EXPECT_DOUBLE_EQ(wrap_angle(-pi), pi);
  EXPECT_NEAR(wrap_angle(3 * pi + 0.1), -pi + 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(2 * pi - 0.2f), -0.2f, 1e-6f);
}

TEST(PoseGrid, FullScaleRegion) {
  const PoseGrid g = make_pose_grid(SearchRegion::symmetric(50, 50, pi / 12), {0.2, 0.2, pi / 360});
  EXPECT_EQ(g.nx(), 501);
  EXPECT_EQ(g.ny(), 501);
  EXPECT_EQ(g.ntheta(), 61);
  EXPECT_NEAR(g.xs[0], -50.0, 1e-9);
  EXPECT_NEAR(g.xs[500], 50.0, 1e-9);
}

TEST(PoseGrid, DegenerateThetaSpanRejected) {
  EXPECT_THROW(make_pose_grid(SearchRegion::symmetric(1, 1, 0), {0.5, 0.5, 0.1}), ConfigError);
  // A span shorter than one step also leaves a single sample.
  EXPECT_THROW(make_pose_grid({{-0.1, 0.1}, {-1, 1}, {-1, 1}}, {0.5, 0.5, 0.5}), ConfigError);
  EXPECT_THROW(make_pose_grid(SearchRegion::symmetric(1, 1, 1), {0.0, 0.5, 0.1}), ConfigError);
}

TEST(PoseGrid, Enumeration) {
  const PoseGrid g = make_pose_grid(SearchRegion::symmetric(0.8, 0.8, 0.1), {0.8, 0.8, 0.1});
  ASSERT_EQ(g.nx(), 3);
  EXPECT_DOUBLE_EQ(g.xs[0], -0.8);
  EXPECT_DOUBLE_EQ(g.xs[1], 0.0);
  EXPECT_DOUBLE_EQ(g.xs[2], 0.8);
}

TEST(PoseGrid, IdentityAlwaysOnGrid) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lo(-5, -0.5), hi(0.5, 5), d(0.05, 0.5);
  for (int n = 0; n < 200; ++n) {
    const SearchRegion r{{lo(rng), hi(rng)}, {lo(rng), hi(rng)}, {lo(rng) / 10, hi(rng) / 10}};
    const PoseGrid g = make_pose_grid(r, {d(rng), d(rng), d(rng) / 10});
    EXPECT_TRUE((g.xs.array() == 0.0).any());
    EXPECT_TRUE((g.ys.array() == 0.0).any());
    EXPECT_TRUE((g.thetas.array() == 0.0).any());
    EXPECT_GE(g.xs.minCoeff(), r.x.min - 1e-9);
    EXPECT_LE(g.xs.maxCoeff(), r.x.max + 1e-9);
  }
}

PolarScan empty_polar(int az, int bins, double res) {
  PolarScan s;
  s.power = Image::Zero(az, bins);
  s.range_resolution = res;
  return s;
}

Eigen::Vector2d centroid(const Image& img) {
  Eigen::Vector2d c(0, 0);
  for (int y = 0; y < img.cols(); ++y) {
    for (int x = 0; x < img.rows(); ++x) c += img(x, y) * Eigen::Vector2d(x, y);
  }
  return c / img.sum();
}

TEST(PolarToCartesian, UniformScanGivesDisk) {
  PolarScan s = empty_polar(64, 32, 0.5);
  s.power.setConstant(0.7);
  const CartesianScan c = polar_to_cartesian(s, 80, 80, 0.25);
  const double max_range = s.max_range();
  for (int y = 0; y < 80; ++y) {
    for (int x = 0; x < 80; ++x) {
      const double r = std::hypot(x - c.center.x(), y - c.center.y()) * 0.25;
      if (r <= max_range - 1e-9) {
        EXPECT_NEAR(c.power(x, y), 0.7, 1e-6);
      } else if (r > max_range + 1e-9) {
        EXPECT_EQ(c.power(x, y), 0.0);
      }
    }
  }
}

TEST(PolarToCartesian, BinAlongPositiveX) {
  PolarScan s = empty_polar(64, 32, 0.5);
  s.power(0, 10) = 1.0;  // azimuth 0 (+x), range 5 m
  const CartesianScan c = polar_to_cartesian(s, 64, 64, 0.25);
  const Eigen::Vector2d m = centroid(c.power);
  EXPECT_NEAR(m.x(), c.center.x() + 5.0 / 0.25, 0.1);
  EXPECT_NEAR(m.y(), c.center.y(), 0.1);
}

TEST(PolarToCartesian, BinAtQuarterTurnLandsOnPositiveY) {
  PolarScan s = empty_polar(64, 32, 0.5);
  s.power(16, 10) = 1.0;  // 16 / 64 of a turn = +90 degrees
  const CartesianScan c = polar_to_cartesian(s, 64, 64, 0.25);
  const Eigen::Vector2d m = centroid(c.power);
  EXPECT_NEAR(m.x(), c.center.x(), 0.1);
  EXPECT_NEAR(m.y(), c.center.y() + 5.0 / 0.25, 0.1);
}

TEST(PolarToCartesian, PreservesValueBounds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PolarScan s = empty_polar(32, 24, 0.4);
    s.power = testing::random_image(32, 24, seed, 0.2, 0.9);
    const CartesianScan c = polar_to_cartesian(s, 40, 40, 0.3);
    for (Eigen::Index i = 0; i < c.power.size(); ++i) {
      const double v = c.power.data()[i];
      EXPECT_TRUE(v == 0.0 || (v >= 0.2 - 1e-12 && v <= 0.9 + 1e-12)) << v;
    }
  }
}

TEST(Rotate, ZeroAngleIsIdentity) {
  const Image img = testing::random_image(9, 7, 3);
  const CartesianScan s = CartesianScan::centered(img, 1.0);
  EXPECT_TRUE((rotate_bilinear(s, 0.0).power == img).all());
}

TEST(Rotate, HalfTurnOnPointSymmetricImage) {
  Image img = testing::random_image(10, 8, 5);
  img = (0.5 * (img + img.reverse())).eval();  // symmetric under (x, y) -> (W-1-x, H-1-y)
  const CartesianScan s = CartesianScan::centered(img, 1.0);
  EXPECT_LT((rotate_bilinear(s, pi).power - img).abs().maxCoeff(), 1e-6);
}

TEST(Rotate, RoundTripOnSmoothImage) {
  const int n = 40;
  Image img = Image::Zero(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) img(x, y) = std::exp(-(std::pow(x - 24.0, 2) + std::pow(y - 17.0, 2)) / (2 * 16.0));
  }
  const CartesianScan s = CartesianScan::centered(img, 1.0);
  for (double theta : {0.1, 0.4, -0.7, 1.3}) {
    const Image back = rotate_bilinear(rotate_bilinear(s, theta), -theta).power;
    EXPECT_LT((back - img).block(2, 2, n - 4, n - 4).abs().maxCoeff(), 0.05) << theta;
  }
}

TEST(Rotate, PositiveAngleIsCounterClockwise) {
  Image img = Image::Zero(21, 21);
  img(15, 10) = 1.0;  // +x of the centre
  const Image r = rotate_bilinear(img, pi / 2, {10.0, 10.0});
  EXPECT_NEAR(r(10, 15), 1.0, 1e-9);  // now +y of the centre
}

TEST(Resize, SameShapeIsIdentity) {
  const Image img = testing::random_image(6, 5, 1);
  EXPECT_TRUE((resize_bilinear(img, 6, 5) == img).all());
}

TEST(Resize, ConstantStaysConstant) {
  const Image img = Image::Constant(7, 9, 0.35);
  for (auto [w, h] : {std::pair{2, 2}, std::pair{13, 4}, std::pair{30, 31}}) {
    EXPECT_LT((resize_bilinear(img, w, h) - 0.35).abs().maxCoeff(), 1e-15);
  }
}

TEST(Resize, CheckerboardHalves) {
  Image img(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) img(x, y) = (x + y) % 2;
  }
  const Image r = resize_bilinear(img, 2, 2);
  EXPECT_TRUE(((r - 0.5).abs() < 1e-15).all()) << r;
}

TEST(Resize, PreservesPhysicalExtent) {
  const CartesianScan s = CartesianScan::centered(Image::Zero(64, 64), 0.25);
  const CartesianScan r = resize_bilinear(s, 32, 32);
  EXPECT_DOUBLE_EQ(r.meters_per_pixel, 0.5);
  EXPECT_DOUBLE_EQ(r.center.x(), 15.5);
}

TEST(WarpScan, TranslationMovesContent) {
  Image img = Image::Zero(20, 20);
  img(5, 7) = 1.0;
  const CartesianScan s = CartesianScan::centered(img, 0.5);
  const CartesianScan w = warp_scan(s, Pose(1.0, -0.5, 0.0));  // +2 px in x, -1 px in y
  EXPECT_NEAR(w.power(7, 6), 1.0, 1e-12);
}

// Gradient checks: each warp is linear in its input, so the adjoint must
// reproduce central differences of sum(out * weights).
class WarpGradient : public ::testing::Test {
 protected:
  void check(const std::function<Image(const Image&)>& fwd, const std::function<Image(const Image&)>& bwd, int w,
             int h, Eigen::Index out_size) {
    const Image x = testing::random_image(w, h, 21);
    const Eigen::ArrayXd weights = testing::flat(testing::random_image(1, static_cast<int>(out_size), 22, -1, 1));
    auto loss = [&](const Eigen::ArrayXd& v) { return (testing::flat(fwd(testing::unflat(v, w, h))) * weights).sum(); };
    const Eigen::ArrayXd fd = testing::finite_difference(loss, testing::flat(x));
    const Image out = fwd(x);
    const Eigen::ArrayXd analytic = testing::flat(bwd(testing::unflat(weights, out.rows(), out.cols())));
    EXPECT_LT(testing::relative_error(fd, analytic), 1e-4);
  }
};

TEST_F(WarpGradient, Rotate) {
  const Eigen::Vector2d c(3.5, 3.5);
  check([&](const Image& x) { return rotate_bilinear(x, 0.37, c); },
        [&](const Image& g) { return rotate_bilinear_backward(g, 0.37, c); }, 8, 8, 64);
}

TEST_F(WarpGradient, Resize) {
  check([](const Image& x) { return resize_bilinear(x, 5, 11); },
        [](const Image& g) { return resize_bilinear_backward(g, 8, 8); }, 8, 8, 55);
}

TEST_F(WarpGradient, PolarToCartesian) {
  PolarScan layout = empty_polar(8, 8, 0.5);
  const CartesianScan out_layout = CartesianScan::centered(Image::Zero(10, 10), 0.4);
  check(
      [&](const Image& x) {
        PolarScan s = layout;
        s.power = x;
        return polar_to_cartesian(s, 10, 10, 0.4).power;
      },
      [&](const Image& g) { return polar_to_cartesian_backward(layout, out_layout, g); }, 8, 8, 100);
}

}  // namespace
}  // namespace rcsm
